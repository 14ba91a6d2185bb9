"""Monte Carlo harness: samplers, scenario generation and experiment runners.

Random numbers come from :class:`RngStream` objects, each a PCG64 generator
seeded by ``SeedSequence(master_seed, spawn_key=(tag, stream_id))``. A data
replication always owns its own stream, so results do not depend on how
replications are split across worker processes. Counts are aggregated as
integers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from . import _kernels
from .dense import (
    Reference,
    _mahalanobis_from_cov,
    _shrinkage_from_cov,
    mahalanobis_decision,
    shrinkage_decision,
)
from .errors import ConfigError, InputError
from .model import (
    CovarianceModel,
    InverseKind,
    PortfolioWeights,
    _numerical_rank,
    gmvp_weights,
    selection_matrix,
)
from .singular import (
    Standardization,
    _mahalanobis_singular_from_cov,
    _singular_standardize,
    mahalanobis_singular_decision,
)

__all__ = [
    "RngStream",
    "TAG_DEFAULT",
    "TAG_BASIS",
    "TAG_DATA",
    "TAG_H0",
    "TAG_H1",
    "PowerEstimate",
    "CurveKind",
    "CurveResult",
    "ScenarioSpec",
    "Scenario",
    "TestKind",
    "ExperimentConfig",
    "DnEnReport",
    "sample_tn_stochastic",
    "sample_tn_singular_stochastic",
    "empirical_power_stochastic",
    "empirical_power_singular_stochastic",
    "empirical_power_curve",
    "empirical_power_shrinkage",
    "scenario_spectrum",
    "build_scenario",
    "build_scenario_sigma",
    "contaminate",
    "factor_sample_covariance",
    "run_power_experiment",
    "run_roc_experiment",
    "roc_auc",
    "dn_en_diagnostic",
    "worker_count",
]

TAG_DEFAULT = 0
TAG_BASIS = 1
TAG_DATA = 2
TAG_H0 = 3
TAG_H1 = 4

THREADS_ENV = "GMVP_TEST_THREADS"


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independent random stream identified by ``(master_seed, tag, stream_id)``."""

    master_seed: int
    stream_id: int = 0
    tag: int = TAG_DEFAULT

    def __post_init__(self) -> None:
        for name in ("master_seed", "stream_id", "tag"):
            value = int(getattr(self, name))
            if value < 0 or value >= 2**64:
                raise InputError(f"{name} must be a 64-bit unsigned integer")
            object.__setattr__(self, name, value)

    def generator(self) -> np.random.Generator:
        key = (self.stream_id,) if self.tag == TAG_DEFAULT else (self.tag, self.stream_id)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.master_seed, spawn_key=key)))


def _as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InputError("rng must be an RngStream or numpy Generator")


# ---------------------------------------------------------------------------
# stochastic representations
# ---------------------------------------------------------------------------


def _chi2(gen: np.random.Generator, df: int, size) -> NDArray[np.float64]:
    # chi-square with zero degrees of freedom is the point mass at zero
    if df == 0:
        return np.zeros(size)
    return gen.chisquare(df, size)


def _representation(gen, lam, df2, df3, df4, ratio, size):
    shape = () if size is None else size
    omega = gen.standard_normal(shape)
    xi2 = _chi2(gen, df2, shape)
    xi3 = _chi2(gen, df3, shape)
    xi4 = _chi2(gen, df4, shape)
    out = _kernels.tn_transform(
        np.atleast_1d(omega), np.atleast_1d(xi2), np.atleast_1d(xi3), np.atleast_1d(xi4), lam, ratio
    )
    return float(out[0]) if size is None else out.reshape(shape)


def sample_tn_stochastic(
    lam: float, p: int, n: int, rng: RngStream | np.random.Generator, size: int | tuple | None = None
):
    """Draw the Mahalanobis statistic from its four-variable representation.

    ``T = (n-p)/(p-1) * ((sqrt(lam xi3) + w)^2 + xi4) / xi2`` with
    ``w ~ N(0,1)``, ``xi2 ~ chi2(n-p)``, ``xi3 ~ chi2(n-1)``,
    ``xi4 ~ chi2(p-2)``. Returns a float when ``size`` is None.
    """
    if not n > p >= 2:
        raise InputError(f"need n > p >= 2, got p={p}, n={n}")
    if lam < 0:
        raise InputError("noncentrality must be nonnegative")
    gen = _as_generator(rng)
    return _representation(gen, float(lam), n - p, n - 1, p - 2, (n - p) / (p - 1), size)


def sample_tn_singular_stochastic(
    lam: float, q: int, k: int, n: int, rng: RngStream | np.random.Generator, size: int | tuple | None = None
):
    """Draw the rank-deficient statistic from its representation.

    Degrees of freedom are ``n-q`` (denominator), ``n-q+k`` (mixing) and
    ``k-1`` (remainder), with ratio ``(n-q)/k``.
    """
    if not n > q >= k >= 1:
        raise InputError(f"need n > q >= k >= 1, got q={q}, k={k}, n={n}")
    if lam < 0:
        raise InputError("noncentrality must be nonnegative")
    gen = _as_generator(rng)
    return _representation(gen, float(lam), n - q, n - q + k, k - 1, (n - q) / k, size)


@dataclass(frozen=True)
class PowerEstimate:
    estimate: float
    std_error: float
    replications: int
    rejections: int

    @classmethod
    def from_count(cls, rejections: int, replications: int) -> PowerEstimate:
        est = rejections / replications
        return cls(est, math.sqrt(est * (1.0 - est) / replications), replications, int(rejections))


def _count_greater(values: NDArray[np.float64], threshold: float) -> int:
    ordered = np.sort(values)
    # entries <= threshold are those below nextafter(threshold, inf)
    below_or_equal = _kernels.count_below(ordered, np.array([np.nextafter(threshold, np.inf)]))[0]
    return int(values.size - below_or_equal)


def empirical_power_stochastic(
    lam: float,
    p: int,
    n: int,
    alpha: float,
    B: int,
    rng: RngStream | np.random.Generator,
    rule: Reference | str = Reference.NORMAL_ASYMPTOTIC,
) -> PowerEstimate:
    """Rejection rate of the Mahalanobis test over ``B`` representation draws.

    ``rule="normal_asymptotic"`` uses the standardized normal cut-off,
    ``rule="f_exact"`` the ``F(p-1, n-p)`` quantile.
    """
    if B < 100:
        raise InputError("B must be at least 100")
    rule = Reference(rule)
    draws = sample_tn_stochastic(lam, p, n, rng, size=B)
    if rule is Reference.F_EXACT:
        crit = stats.f.isf(alpha, p - 1, n - p)
        hits = _count_greater(draws, crit)
    else:
        z = math.sqrt(p - 1) * (draws - 1.0) / math.sqrt(2.0 / (1.0 - p / n))
        hits = _count_greater(z, stats.norm.isf(alpha))
    return PowerEstimate.from_count(hits, B)


def empirical_power_singular_stochastic(
    lam: float,
    q: int,
    k: int,
    n: int,
    alpha: float,
    B: int,
    rng: RngStream | np.random.Generator,
    standardization: Standardization | str = Standardization.GENERAL,
) -> PowerEstimate:
    """Rejection rate of the rank-deficient Mahalanobis test over representation draws."""
    if B < 100:
        raise InputError("B must be at least 100")
    standardization = Standardization(standardization)
    draws = sample_tn_singular_stochastic(lam, q, k, n, rng, size=B)
    z = _singular_standardize(draws, q, k, n, standardization)
    return PowerEstimate.from_count(_count_greater(z, stats.norm.isf(alpha)), B)


def empirical_power_curve(
    grid: Sequence[float],
    p: int,
    n: int,
    alpha: float,
    B: int,
    master_seed: int,
    rule: Reference | str = Reference.NORMAL_ASYMPTOTIC,
    label: str = "",
) -> CurveResult:
    """Stochastic-representation power on a noncentrality grid, one stream per grid point."""
    counts = [
        empirical_power_stochastic(lam, p, n, alpha, B, RngStream(master_seed, i), rule).rejections
        for i, lam in enumerate(grid)
    ]
    return CurveResult.from_counts(grid, counts, B, CurveKind.POWER, label)


def empirical_power_shrinkage(
    R: float, p: int, n: int, alpha: float, B: int, master_seed: int
) -> PowerEstimate:
    """Data-level power of the shrinkage test at relative loss ``R``.

    The law of the statistic depends on the covariance matrix and the target
    only through ``R``, so data are drawn from ``N(0, I_p)`` and the target
    is ``1/p + t d`` with ``d' 1 = 0`` and ``t`` chosen to give loss ``R``.
    For the rank-deficient test call with ``p = q``.
    """
    if R < 0:
        raise InputError("relative loss must be nonnegative")
    d = np.zeros(p)
    d[0], d[1] = 1.0, -1.0
    b = np.full(p, 1.0 / p) + math.sqrt(R / (p * float(d @ d))) * d
    target = PortfolioWeights(b)
    basis = np.eye(p)
    root_scale = np.ones(p)
    hits = 0
    for i in range(B):
        z = RngStream(master_seed, i, TAG_DATA).generator().standard_normal((n, p))
        cov = factor_sample_covariance(z, basis, root_scale, p)
        est = _shrinkage_from_cov(cov, b, p / n, target)
        hits += shrinkage_decision(est.alpha_hat, n, p / n, alpha).reject
    return PowerEstimate.from_count(hits, B)


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


class CurveKind(str, Enum):
    POWER = "power"
    ROC = "roc"


def _binomial_se(est: NDArray[np.float64], B: int) -> NDArray[np.float64]:
    return np.sqrt(est * (1.0 - est) / B)


@dataclass(frozen=True)
class CurveResult:
    """Power or ROC curve with binomial standard errors.

    For ROC curves ``grid`` holds the nominal levels swept, ``estimates`` the
    true-positive rates and ``fpr`` the matching false-positive rates.
    """

    grid: tuple[float, ...]
    estimates: tuple[float, ...]
    std_errors: tuple[float, ...]
    replications: int
    kind: CurveKind
    label: str = ""
    fpr: tuple[float, ...] | None = None
    fpr_std_errors: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        for name in ("grid", "estimates", "std_errors", "fpr", "fpr_std_errors"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))
        object.__setattr__(self, "kind", CurveKind(self.kind))
        m = len(self.grid)
        if len(self.estimates) != m or len(self.std_errors) != m:
            raise InputError("grid, estimates and std_errors must have equal lengths")
        if self.replications < 1:
            raise InputError("replications must be positive")
        self._check_rates(self.estimates, self.std_errors)
        if (self.fpr is None) != (self.fpr_std_errors is None):
            raise InputError("fpr and fpr_std_errors go together")
        if self.fpr is not None:
            if len(self.fpr) != m or len(self.fpr_std_errors) != m:
                raise InputError("fpr columns must match the grid length")
            self._check_rates(self.fpr, self.fpr_std_errors)

    def _check_rates(self, est, se) -> None:
        est = np.asarray(est)
        if np.any(est < 0) or np.any(est > 1):
            raise InputError("rates must lie in [0, 1]")
        if not np.allclose(se, _binomial_se(est, self.replications), rtol=1e-12, atol=0):
            raise InputError("standard errors must equal sqrt(est (1 - est) / B)")

    @classmethod
    def from_counts(
        cls,
        grid: Iterable[float],
        counts: Iterable[int],
        B: int,
        kind: CurveKind | str,
        label: str = "",
        fpr_counts: Iterable[int] | None = None,
    ) -> CurveResult:
        est = np.asarray(list(counts), dtype=np.int64) / B
        fpr = fpr_se = None
        if fpr_counts is not None:
            fpr = np.asarray(list(fpr_counts), dtype=np.int64) / B
            fpr_se = _binomial_se(fpr, B)
        return cls(tuple(grid), tuple(est), tuple(_binomial_se(est, B)), B, CurveKind(kind), label, fpr, fpr_se)


def roc_auc(curve: CurveResult) -> float:
    """Trapezoidal area under an ROC curve, anchored at (0, 0) and (1, 1)."""
    if curve.kind is not CurveKind.ROC or curve.fpr is None:
        raise InputError("roc_auc needs an ROC curve")
    fpr = np.concatenate([[0.0], curve.fpr, [1.0]])
    tpr = np.concatenate([[0.0], curve.estimates, [1.0]])
    order = np.lexsort((tpr, fpr))
    x, y = fpr[order], tpr[order]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """Covariance scenario: dimension ``p``, rank ``q``, basis seed and contamination."""

    p: int
    q: int
    seed: int
    m_fraction: float = 0.2
    kappa: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.q <= self.p:
            raise InputError(f"need 1 <= q <= p, got p={self.p}, q={self.q}")
        if not 0.0 < self.m_fraction <= 1.0:
            raise InputError("m_fraction must lie in (0, 1]")
        if self.kappa < 0:
            raise InputError("kappa must be nonnegative")
        RngStream(self.seed)

    @property
    def a(self) -> float:
        return 1.0 + 0.1 * self.kappa

    @property
    def m(self) -> int:
        return int(math.floor(self.m_fraction * self.q + 0.5))


def scenario_spectrum(q: int) -> NDArray[np.float64]:
    """Nonzero eigenvalues in listing order: ``floor(q/9)`` twos, ``floor(4q/9)`` fives, tens for the rest."""
    if q < 1:
        raise InputError("q must be positive")
    twos = q // 9
    fives = (4 * q) // 9
    return np.concatenate([np.full(twos, 2.0), np.full(fives, 5.0), np.full(q - twos - fives, 10.0)])


def _wishart_basis(p: int, seed: int) -> NDArray[np.float64]:
    z = RngStream(seed, 0, TAG_BASIS).generator().standard_normal((p, p))
    _, vecs = np.linalg.eigh(z.T @ z)
    return vecs


@dataclass(frozen=True, eq=False)
class Scenario:
    """Spectrum in listing order (zeros last) and the orthogonal basis ``Theta``."""

    spec: ScenarioSpec
    eigenvalues: NDArray[np.float64]
    basis: NDArray[np.float64]

    def scaled_eigenvalues(self, kappa: int) -> NDArray[np.float64]:
        vals = self.eigenvalues.copy()
        m = self.spec.m
        if m > self.spec.q:
            raise InputError(f"m={m} exceeds the rank q={self.spec.q}")
        vals[:m] *= (1.0 + 0.1 * kappa) ** 2
        return vals

    def root_scale(self, kappa: int) -> NDArray[np.float64]:
        """Diagonal ``D`` such that ``Theta_q diag(D)`` is a factor root of the contaminated matrix."""
        return np.sqrt(self.scaled_eigenvalues(kappa)[: self.spec.q])

    def covariance(self, kappa: int | None = None) -> CovarianceModel:
        kappa = self.spec.kappa if kappa is None else kappa
        return CovarianceModel.from_spectrum(self.scaled_eigenvalues(kappa), self.basis, rank=self.spec.q)


def build_scenario(spec: ScenarioSpec) -> Scenario:
    vals = np.concatenate([scenario_spectrum(spec.q), np.zeros(spec.p - spec.q)])
    return Scenario(spec, vals, _wishart_basis(spec.p, spec.seed))


def build_scenario_sigma(spec: ScenarioSpec) -> CovarianceModel:
    """Covariance matrix ``Theta Delta Lambda Delta Theta'`` of a scenario.

    ``Theta`` holds the eigenvectors of a ``W_p(p, I)`` draw seeded by
    ``spec.seed``; ``Lambda`` carries :func:`scenario_spectrum` followed by
    ``p - q`` zeros; ``Delta`` scales the first ``m`` entries by
    ``1 + 0.1 kappa``.
    """
    return build_scenario(spec).covariance()


def contaminate(eigenvalues: ArrayLike, eigenvectors: ArrayLike, m: int, kappa: int) -> CovarianceModel:
    """``Theta Delta Lambda Delta Theta'`` with the first ``m`` eigenvalues scaled by ``(1 + 0.1 kappa)^2``.

    ``eigenvalues`` are in the listing order of ``eigenvectors`` (columns).
    """
    vals = np.asarray(eigenvalues, dtype=np.float64).copy()
    rank = int(np.sum(vals > 0))
    if not 0 <= m <= rank:
        raise InputError(f"m={m} must lie in [0, rank={rank}]")
    vals[:m] *= (1.0 + 0.1 * kappa) ** 2
    return CovarianceModel.from_spectrum(vals, eigenvectors, rank=rank)


def factor_sample_covariance(
    z: NDArray[np.float64], basis: NDArray[np.float64], root_scale: NDArray[np.float64], q: int
) -> CovarianceModel:
    """Sample covariance of ``X = Z (Theta_q diag(D))'`` without forming ``X``.

    With ``M = Zc'Zc / (n-1)`` the sample covariance equals
    ``Theta_q (D M D) Theta_q'``, so its nonzero spectrum comes from the
    ``q x q`` matrix ``D M D``. The complement of ``Theta_q`` supplies the
    null eigenvectors. Working rank is ``q``.
    """
    n = z.shape[0]
    zc = z - z.mean(axis=0)
    m = zc.T @ zc / (n - 1)
    a = root_scale[:, None] * m * root_scale[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    lead = basis[:, :q] @ vecs
    p = basis.shape[0]
    eigenvectors = np.concatenate([lead, basis[:, q:]], axis=1)
    eigenvalues = np.concatenate([vals, np.zeros(p - q)])
    matrix = (lead * vals) @ lead.T
    matrix = 0.5 * (matrix + matrix.T)
    kind = InverseKind.CLASSICAL if q == p else InverseKind.MOORE_PENROSE
    return CovarianceModel(matrix, eigenvalues, eigenvectors, q, kind, is_sample=True)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


class TestKind(str, Enum):
    __test__ = False

    DENSE_MAHALANOBIS = "dense_mahalanobis"
    DENSE_MAHALANOBIS_EXACT = "dense_mahalanobis_exact"
    DENSE_SHRINKAGE = "dense_shrinkage"
    SINGULAR_MAHALANOBIS = "singular_mahalanobis"
    SINGULAR_SHRINKAGE = "singular_shrinkage"

    @property
    def is_dense(self) -> bool:
        return self.value.startswith("dense")


@dataclass(frozen=True)
class ExperimentConfig:
    """Descriptor shared by power and ROC experiments.

    ``kappas`` drive the power curve; ``roc_kappa`` (default 4, ``a = 1.4``)
    is the alternative of the ROC curve and ``thresholds`` its level grid.
    Dense tests on rank-deficient data need ``ignore_singularity``.
    """

    tests: tuple[TestKind, ...]
    p: int
    n: int
    q: int | None = None
    m_fraction: float = 0.2
    kappas: tuple[int, ...] = (0,)
    alpha: float = 0.05
    B: int = 10_000
    seed: int = 0
    k: int | None = None
    standardization: Standardization = Standardization.GENERAL
    ignore_singularity: bool = False
    roc_kappa: int = 4
    thresholds: tuple[float, ...] = field(default_factory=lambda: tuple(np.round(np.linspace(0.01, 0.99, 99), 10)))

    def __post_init__(self) -> None:
        try:
            tests = tuple(TestKind(t) for t in self.tests)
            std = Standardization(self.standardization)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "tests", tests)
        object.__setattr__(self, "standardization", std)
        object.__setattr__(self, "kappas", tuple(int(k) for k in self.kappas))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if self.q is None:
            object.__setattr__(self, "q", self.p)
        self.validate()

    @property
    def rank(self) -> int:
        return int(self.q)

    @property
    def k_effective(self) -> int:
        return self.k if self.k is not None else max(self.rank - 1, 1)

    def validate(self) -> None:
        problems = []
        if not self.tests:
            problems.append("tests: at least one test is required")
        if self.p < 2 or not 1 <= self.rank <= self.p:
            problems.append(f"q: need 1 <= q <= p, got p={self.p}, q={self.q}")
        if self.n <= self.rank:
            problems.append(f"n: need n > q, got n={self.n}, q={self.q}")
        if not 0 < self.alpha < 1:
            problems.append("alpha: must lie in (0, 1)")
        if self.B < 1:
            problems.append("B: must be positive")
        if not 0 < self.m_fraction <= 1:
            problems.append("m_fraction: must lie in (0, 1]")
        if any(k < 0 for k in self.kappas) or not self.kappas or self.roc_kappa < 0:
            problems.append("kappas: need nonnegative integers")
        if any(not 0 < t < 1 for t in self.thresholds):
            problems.append("thresholds: must lie in (0, 1)")
        if self.k is not None and not 1 <= self.k <= min(self.rank, self.p - 1):
            problems.append("k: must lie in [1, min(q, p-1)]")
        for t in self.tests:
            if t.is_dense:
                if self.n <= self.p:
                    problems.append(f"tests: {t.value} needs n > p")
                if self.rank < self.p and not self.ignore_singularity:
                    problems.append(f"tests: {t.value} with q < p needs ignore_singularity")
        if problems:
            raise ConfigError("; ".join(problems))

    def scenario_spec(self, kappa: int = 0) -> ScenarioSpec:
        return ScenarioSpec(self.p, self.rank, self.seed, self.m_fraction, kappa)


def worker_count(requested: int | None = None) -> int:
    """Number of worker processes: explicit request, else ``GMVP_TEST_THREADS`` (0 = all CPUs)."""
    if requested is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            requested = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if requested < 0:
        raise ConfigError("worker count must be nonnegative")
    if requested == 0:
        try:
            return max(len(os.sched_getaffinity(0)), 1)
        except AttributeError:  # pragma: no cover - non-Linux
            return os.cpu_count() or 1
    return requested


def _replication_pvalues(
    config: ExperimentConfig, cov: CovarianceModel, r: NDArray[np.float64], L: NDArray[np.float64]
) -> NDArray[np.float64]:
    n, p, q = config.n, config.p, config.rank
    out = np.empty(len(config.tests))
    target = PortfolioWeights(r)
    for j, kind in enumerate(config.tests):
        if kind in (TestKind.DENSE_MAHALANOBIS, TestKind.DENSE_MAHALANOBIS_EXACT):
            t = _mahalanobis_from_cov(cov, r, n)
            mode = Reference.F_EXACT if kind is TestKind.DENSE_MAHALANOBIS_EXACT else Reference.NORMAL_ASYMPTOTIC
            out[j] = mahalanobis_decision(t, p, n, config.alpha, mode).p_value
        elif kind is TestKind.DENSE_SHRINKAGE:
            est = _shrinkage_from_cov(cov, r, p / n, target)
            out[j] = shrinkage_decision(est.alpha_hat, n, p / n, config.alpha).p_value
        elif kind is TestKind.SINGULAR_MAHALANOBIS:
            k = L.shape[0]
            t = _mahalanobis_singular_from_cov(cov, L, r[:k], n)
            out[j] = mahalanobis_singular_decision(t, q, k, n, config.alpha, config.standardization).p_value
        else:
            est = _shrinkage_from_cov(cov, r, q / n, target)
            out[j] = shrinkage_decision(est.alpha_hat, n, q / n, config.alpha).p_value
    return out


def _pvalue_chunk(task) -> NDArray[np.float64]:
    """P-values with shape ``(len(kappas), len(tests), stop - start)``."""
    config, basis, eigenvalues, r, kappas, tag, start, stop = task
    q = config.rank
    m = config.scenario_spec().m
    L = selection_matrix(config.p, np.arange(config.k_effective))
    scales = []
    for kappa in kappas:
        vals = eigenvalues.copy()
        vals[:m] *= (1.0 + 0.1 * kappa) ** 2
        scales.append(np.sqrt(vals[:q]))
    out = np.empty((len(kappas), len(config.tests), stop - start))
    for i, rep in enumerate(range(start, stop)):
        z = RngStream(config.seed, rep, tag).generator().standard_normal((config.n, q))
        for a, scale in enumerate(scales):
            cov = factor_sample_covariance(z, basis, scale, q)
            if cov.rank < config.p:
                detected = _numerical_rank(cov.eigenvalues, config.p)
                if detected != q:
                    raise ConfigError(f"sample covariance has numerical rank {detected}, expected {q}")
            out[a, :, i] = _replication_pvalues(config, cov, r, L)
    return out


def _run_chunks(config: ExperimentConfig, scenario: Scenario, r, kappas, tag, workers: int | None):
    B = config.B
    nworkers = min(worker_count(workers), B)
    bounds = np.linspace(0, B, max(nworkers, 1) * 4 + 1 if nworkers > 1 else 2).astype(int)
    tasks = [
        (config, scenario.basis, scenario.eigenvalues, r, tuple(kappas), tag, int(lo), int(hi))
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    if nworkers <= 1:
        parts = [_pvalue_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            parts = list(pool.map(_pvalue_chunk, tasks))
    return np.concatenate(parts, axis=2)


def _scenario_and_null(config: ExperimentConfig) -> tuple[Scenario, NDArray[np.float64]]:
    scenario = build_scenario(config.scenario_spec())
    r = gmvp_weights(scenario.covariance(0)).weights
    return scenario, r


def _count_below(pvalues: NDArray[np.float64], levels: Sequence[float]) -> NDArray[np.int64]:
    return _kernels.count_below(np.sort(pvalues), np.asarray(levels, dtype=np.float64))


def run_power_experiment(config: ExperimentConfig, workers: int | None = None) -> dict[TestKind, CurveResult]:
    """Empirical power of every configured test along the ``kappa`` grid.

    The hypothesised weights are the GMVP of the uncontaminated matrix.
    Replication ``b`` uses the same stream at every ``kappa``, so curves are
    driven only by the contamination.
    """
    scenario, r = _scenario_and_null(config)
    pv = _run_chunks(config, scenario, r, config.kappas, TAG_DATA, workers)
    out = {}
    for j, kind in enumerate(config.tests):
        counts = [int(_count_below(pv[a, j], [config.alpha])[0]) for a in range(len(config.kappas))]
        out[kind] = CurveResult.from_counts(config.kappas, counts, config.B, CurveKind.POWER, kind.value)
    return out


def run_roc_experiment(config: ExperimentConfig, workers: int | None = None) -> dict[TestKind, CurveResult]:
    """ROC curves: false positives from the uncontaminated matrix, true positives at ``roc_kappa``.

    Each threshold ``t`` of ``config.thresholds`` counts p-values below
    ``t``; null and alternative replications use separate stream tags.
    """
    scenario, r = _scenario_and_null(config)
    pv0 = _run_chunks(config, scenario, r, (0,), TAG_H0, workers)[0]
    pv1 = _run_chunks(config, scenario, r, (config.roc_kappa,), TAG_H1, workers)[0]
    out = {}
    for j, kind in enumerate(config.tests):
        fp = _count_below(pv0[j], config.thresholds)
        tp = _count_below(pv1[j], config.thresholds)
        out[kind] = CurveResult.from_counts(config.thresholds, tp, config.B, CurveKind.ROC, kind.value, fp)
    return out


# ---------------------------------------------------------------------------
# joint CLT diagnostic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DnEnReport:
    """Empirical moments of ``(sqrt(n) D_n, sqrt(n) E_n)`` against their limits.

    ``D_n = b'S b / b'b - 1`` and ``E_n = 1'S^-1 1 / p - 1/(1-c)`` under
    ``Sigma = I``.
    """

    var_d: float
    var_e: float
    cov_de: float
    se_var_d: float
    se_var_e: float
    se_cov_de: float
    target_var_d: float
    target_var_e: float
    target_cov_de: float
    replications: int


def dn_en_diagnostic(
    p: int, n: int, B: int, rng: RngStream | np.random.Generator, b: ArrayLike | None = None
) -> DnEnReport:
    """Monte Carlo check of the joint normal limit of the two quadratic forms.

    ``b`` defaults to the first unit vector. Standard errors are the usual
    delta-method estimates from the fourth moments.
    """
    if not n > p >= 1:
        raise InputError("need n > p")
    if B < 2:
        raise InputError("B must be at least 2")
    b = np.eye(p)[0] if b is None else np.asarray(b, dtype=np.float64)
    if b.shape != (p,) or not np.any(b):
        raise InputError("b must be a nonzero vector of length p")
    gen = _as_generator(rng)
    c = p / n
    ones = np.ones(p)
    bb = float(b @ b)
    d = np.empty(B)
    e = np.empty(B)
    for i in range(B):
        x = gen.standard_normal((n, p))
        xc = x - x.mean(axis=0)
        s = xc.T @ xc / (n - 1)
        d[i] = float(b @ s @ b) / bb - 1.0
        e[i] = float(ones @ np.linalg.solve(s, ones)) / p - 1.0 / (1.0 - c)
    u = math.sqrt(n) * (d - d.mean())
    v = math.sqrt(n) * (e - e.mean())
    xy2 = float(b.sum()) ** 2 / (bb * p)
    return DnEnReport(
        var_d=float(np.var(u, ddof=1)),
        var_e=float(np.var(v, ddof=1)),
        cov_de=float(np.sum(u * v) / (B - 1)),
        se_var_d=float(np.std(u * u, ddof=1) / math.sqrt(B)),
        se_var_e=float(np.std(v * v, ddof=1) / math.sqrt(B)),
        se_cov_de=float(np.std(u * v, ddof=1) / math.sqrt(B)),
        target_var_d=2.0,
        target_var_e=2.0 / (1.0 - c) ** 3,
        target_cov_de=-2.0 * xy2 / (1.0 - c),
        replications=B,
    )
