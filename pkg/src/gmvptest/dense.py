"""Tests on GMVP weights for a full-rank covariance matrix.

Two statistics are provided:

* the Mahalanobis-distance statistic ``T_n``, exactly ``F(p-1, n-p)`` under
  the null and asymptotically normal when ``p/n -> c in (0, 1)``;
* the shrinkage-intensity statistic ``S_n = sqrt(n) * alpha_hat`` which is
  centred at zero exactly when the hypothesised portfolio is the GMVP.

Every test rejects in the upper tail only. A statistic equal to its critical
value does not reject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate, stats

from . import _kernels
from .errors import DegenerateError, InputError, UnsupportedError
from .model import (
    CovarianceModel,
    PortfolioWeights,
    ReturnsMatrix,
    as_returns,
    as_weights,
    gmvp_weights,
    q_matrix,
    sample_covariance,
    spd_quadratic_form,
)

__all__ = [
    "Reference",
    "TestOutcome",
    "CltParams",
    "ShrinkageEstimate",
    "EXACT_POWER_MAX_P",
    "EXACT_POWER_MAX_N",
    "mahalanobis_statistic",
    "mahalanobis_decision",
    "mahalanobis_test",
    "c_spread",
    "mahalanobis_clt_params",
    "power_mahalanobis_asymptotic",
    "power_mahalanobis_exact",
    "exact_density",
    "power_mahalanobis_exact_series",
    "shrinkage_intensity",
    "shrinkage_clt_params",
    "shrinkage_decision",
    "shrinkage_test",
    "power_shrinkage_asymptotic",
]

EXACT_POWER_MAX_P = 50
EXACT_POWER_MAX_N = 200
SERIES_MAX_P_MINUS_1 = 10
SERIES_MAX_N = 50
MIXTURE_TAIL = 1e-10
MIXTURE_PANELS = 16
MIXTURE_NODES = 48


class Reference(str, Enum):
    F_EXACT = "f_exact"
    NORMAL_ASYMPTOTIC = "normal_asymptotic"


@dataclass(frozen=True)
class TestOutcome:
    """Result of one hypothesis test.

    ``standardized`` is the statistic after the normal standardization of the
    asymptotic rule; it is reported for both reference distributions.
    ``effect_estimate`` is the plug-in noncentrality for the Mahalanobis test
    and the estimated shrinkage intensity for the shrinkage test.
    """

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    standardized: float
    reference: Reference
    p_value: float
    reject: bool
    alpha: float
    effect_estimate: float
    c_n: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_value <= 1.0) or not math.isfinite(self.p_value):
            raise InputError(f"p-value must lie in [0, 1], got {self.p_value}")
        if bool(self.reject) != (self.p_value < self.alpha):
            raise InputError("reject flag inconsistent with p-value")

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "standardized": self.standardized,
            "reference": self.reference.value,
            "p_value": self.p_value,
            "reject": bool(self.reject),
            "alpha": self.alpha,
            "effect_estimate": self.effect_estimate,
            "c_n": self.c_n,
        }


@dataclass(frozen=True)
class CltParams:
    center: float
    spread: float

    def __post_init__(self) -> None:
        if not self.spread > 0:
            raise InputError("CLT spread must be positive")


@dataclass(frozen=True)
class ShrinkageEstimate:
    r_hat: float
    alpha_hat: float
    target: PortfolioWeights
    c_n: float

    @property
    def alpha_clamped(self) -> float:
        """Intensity restricted to ``[0, 1]`` for building a shrunk portfolio."""
        return min(max(self.alpha_hat, 0.0), 1.0)

    def shrunk_weights(self, estimated_gmvp: PortfolioWeights | ArrayLike) -> np.ndarray:
        """``a * w_hat + (1 - a) * b`` with the clamped intensity ``a``."""
        w = as_weights(estimated_gmvp).weights
        a = self.alpha_clamped
        return a * w + (1.0 - a) * self.target.weights


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _check_ratio(c: float) -> float:
    if not 0.0 < c < 1.0:
        raise InputError(f"concentration ratio must lie in (0, 1), got {c}")
    return c


def _finalize(
    statistic: float,
    standardized: float,
    reference: Reference,
    above_critical: bool,
    tail_probability: float,
    alpha: float,
    effect: float,
    c_n: float,
) -> TestOutcome:
    # The decision is the strict comparison; the p-value is nudged only when
    # rounding in the tail function would contradict it.
    p = float(min(max(tail_probability, 0.0), 1.0))
    if above_critical and p >= alpha:
        p = math.nextafter(alpha, 0.0)
    elif not above_critical and p < alpha:
        p = alpha
    return TestOutcome(
        float(statistic), float(standardized), reference, p, bool(above_critical), alpha, float(effect), c_n
    )


# ---------------------------------------------------------------------------
# Mahalanobis-distance test
# ---------------------------------------------------------------------------


def _dense_inputs(returns, r) -> tuple[ReturnsMatrix, PortfolioWeights]:
    x = as_returns(returns)
    r = as_weights(r)
    if x.n <= x.p:
        raise InputError(
            f"n={x.n} <= p={x.p}: the sample covariance is singular; use the singular tests with a rank q"
        )
    if r.p != x.p:
        raise InputError("hypothesised weights do not match the number of assets")
    return x, r


def _dense_sample_cov(x: ReturnsMatrix, ignore_singularity: bool = False) -> CovarianceModel:
    cov = sample_covariance(x)
    if cov.rank < cov.p and not ignore_singularity:
        raise DegenerateError(f"sample covariance has numerical rank {cov.rank} < p={cov.p}")
    return cov


def _mahalanobis_from_cov(cov: CovarianceModel, r: np.ndarray, n: int) -> float:
    p = cov.p
    s = float(cov.precision.sum())
    d = gmvp_weights(cov).weights - r
    if cov.rank == p:
        quad = spd_quadratic_form(q_matrix(cov)[:-1, :-1], d[:-1])
    else:
        # For a full-rank matrix d*'(Q*)^-1 d* equals d' S d whenever 1'd = 0.
        # The right-hand side stays defined when S is singular and is used
        # as the rank-ignoring version of the statistic.
        quad = float(d @ cov.matrix @ d)
    return (n - p) / (p - 1) * s * quad


def mahalanobis_statistic(
    returns: ReturnsMatrix | ArrayLike, r: PortfolioWeights | ArrayLike, *, ignore_singularity: bool = False
) -> float:
    """Mahalanobis distance between the sample GMVP weights and ``r``.

    Parameters
    ----------
    returns : ReturnsMatrix or array_like
        ``n x p`` returns with ``n > p``.
    r : PortfolioWeights or array_like
        Hypothesised weights, summing to one.
    ignore_singularity : bool, default False
        Evaluate the statistic with the Moore-Penrose inverse when the sample
        covariance is rank deficient instead of raising. The reference
        distribution is then wrong; this exists to study that failure.

    Returns
    -------
    float
        ``(n-p)/(p-1) * (1'S^-1 1) * d*' (Q*)^-1 d*`` where ``d = w_hat - r``
        and ``*`` drops the last asset. ``F(p-1, n-p)`` under the null.
    """
    x, r = _dense_inputs(returns, r)
    cov = _dense_sample_cov(x, ignore_singularity)
    return _mahalanobis_from_cov(cov, r.weights, x.n)


def _asymptotic_standardize(t: float, p: int, n: int) -> float:
    c = p / n
    return math.sqrt(p - 1) * (t - 1.0) / math.sqrt(2.0 / (1.0 - c))


def mahalanobis_decision(
    statistic: float, p: int, n: int, alpha: float = 0.05, mode: Reference | str = Reference.F_EXACT
) -> TestOutcome:
    """Turn a Mahalanobis statistic into a test outcome."""
    alpha = _check_alpha(alpha)
    mode = Reference(mode)
    if not n > p >= 2:
        raise InputError(f"need n > p >= 2, got p={p}, n={n}")
    c = p / n
    t = float(statistic)
    z = _asymptotic_standardize(t, p, n)
    effect = t * (p - 1) / (n - p)
    if mode is Reference.F_EXACT:
        crit = stats.f.isf(alpha, p - 1, n - p)
        return _finalize(t, z, mode, t > crit, stats.f.sf(t, p - 1, n - p), alpha, effect, c)
    crit = stats.norm.isf(alpha)
    return _finalize(t, z, mode, z > crit, stats.norm.sf(z), alpha, effect, c)


def mahalanobis_test(
    returns: ReturnsMatrix | ArrayLike,
    r: PortfolioWeights | ArrayLike,
    alpha: float = 0.05,
    mode: Reference | str = Reference.F_EXACT,
    *,
    ignore_singularity: bool = False,
) -> TestOutcome:
    """Test ``H0: w_GMVP = r`` with the Mahalanobis statistic.

    ``mode="f_exact"`` compares with the ``F(p-1, n-p)`` quantile;
    ``mode="normal_asymptotic"`` rejects when
    ``sqrt(p-1)(T-1) / sqrt(2/(1-p/n))`` exceeds the normal quantile.
    """
    x, r = _dense_inputs(returns, r)
    t = mahalanobis_statistic(x, r, ignore_singularity=ignore_singularity)
    return mahalanobis_decision(t, x.p, x.n, alpha, mode)


def c_spread(lam: float, c_n: float) -> float:
    """Asymptotic standard deviation of ``sqrt(p-1)(T_n - 1)`` at noncentrality ``lam``."""
    c = _check_ratio(float(c_n))
    if lam < 0:
        raise InputError("noncentrality must be nonnegative")
    r = lam / c
    c2 = 2.0 + 2.0 * lam * lam / c + 4.0 * r + 2.0 * c / (1.0 - c) * (1.0 + r) ** 2
    return math.sqrt(c2)


def mahalanobis_clt_params(lam: float, p: int, n: int) -> CltParams:
    """Centre ``1 + lam (n-1)/(p-1)`` and spread ``C_n`` of the alternative CLT."""
    return CltParams(1.0 + lam * (n - 1) / (p - 1), c_spread(lam, p / n))


def power_mahalanobis_asymptotic(lam: float, p: int, n: int, alpha: float = 0.05) -> float:
    """Large-dimensional power of the normal-asymptotic Mahalanobis test."""
    alpha = _check_alpha(alpha)
    if not n > p >= 2:
        raise InputError(f"need n > p >= 2, got p={p}, n={n}")
    c = p / n
    z = stats.norm.isf(alpha)
    arg = (math.sqrt(2.0 / (1.0 - c)) * z - math.sqrt(p - 1) * lam / c) / c_spread(lam, c)
    return float(stats.norm.sf(arg))


def _mixture_nodes(df: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights for a chi-square(df) expectation.

    The support is truncated at the ``1e-10`` quantiles and split into equal
    panels; weights include the density.
    """
    lo = stats.chi2.ppf(MIXTURE_TAIL, df)
    hi = stats.chi2.isf(MIXTURE_TAIL, df)
    base_x, base_w = np.polynomial.legendre.leggauss(MIXTURE_NODES)
    edges = np.linspace(lo, hi, MIXTURE_PANELS + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * base_x[None, :]).ravel()
    weights = (half[:, None] * base_w[None, :]).ravel() * stats.chi2.pdf(nodes, df)
    return nodes, weights


def _check_small_instance(p: int, n: int) -> None:
    if p > EXACT_POWER_MAX_P or n > EXACT_POWER_MAX_N:
        raise UnsupportedError(
            f"exact power is limited to p <= {EXACT_POWER_MAX_P}, n <= {EXACT_POWER_MAX_N}; "
            "use power_mahalanobis_asymptotic for larger instances"
        )


def power_mahalanobis_exact(lam: float, p: int, n: int, alpha: float = 0.05) -> float:
    """Finite-sample power of the F test.

    Given ``xi ~ chi2(n-1)``, ``T_n`` is noncentral ``F(p-1, n-p)`` with
    noncentrality ``lam * xi``; the tail probability beyond the central F
    quantile is averaged over ``xi`` by Gauss-Legendre quadrature.
    """
    alpha = _check_alpha(alpha)
    if not n > p >= 2:
        raise InputError(f"need n > p >= 2, got p={p}, n={n}")
    if lam < 0:
        raise InputError("noncentrality must be nonnegative")
    _check_small_instance(p, n)
    if lam == 0:
        return alpha
    crit = stats.f.isf(alpha, p - 1, n - p)
    nodes, weights = _mixture_nodes(n - 1)
    tail = stats.ncf.sf(crit, p - 1, n - p, lam * nodes)
    mass = weights.sum()
    return float(np.dot(weights, tail) / mass)


def exact_density(x: ArrayLike, lam: float, p: int, n: int) -> np.ndarray:
    """Closed-form density of ``T_n`` under the alternative via the 2F1 series.

    Only evaluated for ``p - 1 <= 10`` and ``n <= 50`` where the series is
    cheap and accurate.
    """
    if p - 1 > SERIES_MAX_P_MINUS_1 or n > SERIES_MAX_N:
        raise UnsupportedError("the hypergeometric series is only used for p-1 <= 10, n <= 50")
    x = np.asarray(x, dtype=np.float64)
    m = 0.5 * (n - 1)
    arg = (p - 1) * x / (n - p + (p - 1) * x) * lam / (1.0 + lam)
    series = _kernels.hyp2f1_series(m, m, 0.5 * (p - 1), arg)
    return stats.f.pdf(x, p - 1, n - p) * (1.0 + lam) ** (-m) * series


def power_mahalanobis_exact_series(lam: float, p: int, n: int, alpha: float = 0.05) -> float:
    """Exact power by integrating :func:`exact_density` beyond the F quantile."""
    alpha = _check_alpha(alpha)
    crit = stats.f.isf(alpha, p - 1, n - p)
    val, _ = integrate.quad(
        lambda t: float(exact_density(t, lam, p, n)), crit, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200
    )
    return float(val)


# ---------------------------------------------------------------------------
# Shrinkage-intensity test
# ---------------------------------------------------------------------------


def _intensity(r_hat: float, c: float) -> float:
    den = c + (1.0 - c) * r_hat
    if abs(den) < 1e-12:
        raise DegenerateError("shrinkage intensity denominator vanishes")
    return (1.0 - c) * r_hat / den


def _shrinkage_from_cov(cov: CovarianceModel, b: np.ndarray, c: float, target: PortfolioWeights) -> ShrinkageEstimate:
    s = float(cov.precision.sum())
    if not s > 1e-12 * float(np.max(np.abs(cov.precision))):
        raise DegenerateError("1' S^+ 1 is numerically zero")
    r_hat = (1.0 - c) * float(b @ cov.matrix @ b) * s - 1.0
    return ShrinkageEstimate(r_hat, _intensity(r_hat, c), target, c)


def shrinkage_intensity(
    returns: ReturnsMatrix | ArrayLike, b: PortfolioWeights | ArrayLike, *, ignore_singularity: bool = False
) -> ShrinkageEstimate:
    """Consistent estimates of the relative loss of ``b`` and the optimal intensity.

    ``R_hat = (1 - p/n) b'S b 1'S^-1 1 - 1`` and
    ``alpha_hat = (1-c) R_hat / (c + (1-c) R_hat)`` with ``c = p/n``.
    Neither is clamped. ``ignore_singularity`` swaps in the Moore-Penrose
    inverse for a rank-deficient sample covariance while keeping ``c = p/n``.
    """
    x, b = _dense_inputs(returns, b)
    cov = _dense_sample_cov(x, ignore_singularity)
    return _shrinkage_from_cov(cov, b.weights, x.p / x.n, b)


def shrinkage_clt_params(R: float, c_n: float) -> CltParams:
    """Centre ``A_n`` and spread ``B_n`` of the limiting law of the intensity."""
    c = _check_ratio(float(c_n))
    if R < 0:
        raise InputError("relative loss must be nonnegative")
    den = c + (1.0 - c) * R
    a = (1.0 - c) * R / den
    b2 = 2.0 * c * c * (1.0 - c) * (2.0 - c) * (R + 1.0) / den**4 * (R + c / (2.0 - c))
    return CltParams(a, math.sqrt(b2))


def shrinkage_decision(intensity: float, n: int, c: float, alpha: float = 0.05) -> TestOutcome:
    """Outcome of the shrinkage test given an intensity estimate."""
    alpha = _check_alpha(alpha)
    c = _check_ratio(c)
    s_n = math.sqrt(n) * intensity
    z = s_n / math.sqrt(2.0 * (1.0 - c) / c)
    crit = stats.norm.isf(alpha)
    return _finalize(s_n, z, Reference.NORMAL_ASYMPTOTIC, z > crit, stats.norm.sf(z), alpha, intensity, c)


def shrinkage_test(
    returns: ReturnsMatrix | ArrayLike,
    r: PortfolioWeights | ArrayLike,
    alpha: float = 0.05,
    *,
    ignore_singularity: bool = False,
) -> TestOutcome:
    """Test ``H0: w_GMVP = r`` through the estimated shrinkage intensity towards ``r``."""
    x, r = _dense_inputs(returns, r)
    est = shrinkage_intensity(x, r, ignore_singularity=ignore_singularity)
    return shrinkage_decision(est.alpha_hat, x.n, x.p / x.n, alpha)


def power_shrinkage_asymptotic(R: float, p: int, n: int, alpha: float = 0.05) -> float:
    """Asymptotic power of the shrinkage test at relative loss ``R``."""
    alpha = _check_alpha(alpha)
    if not n > p >= 1:
        raise InputError(f"need n > p, got p={p}, n={n}")
    c = p / n
    params = shrinkage_clt_params(R, c)
    z = stats.norm.isf(alpha)
    arg = (math.sqrt(2.0 * (1.0 - c) / c) * z - math.sqrt(n) * params.center) / params.spread
    return float(stats.norm.sf(arg))
