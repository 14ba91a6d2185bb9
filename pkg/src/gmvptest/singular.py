"""Tests on GMVP weights when the covariance matrix has rank ``q < p``.

The sample covariance is inverted with the Moore-Penrose inverse restricted
to its leading ``q`` eigenpairs. ``p`` may exceed ``n``; only ``n > q`` is
required. The rank ``q`` is always supplied by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from .dense import (
    ShrinkageEstimate,
    TestOutcome,
    Reference,
    _check_alpha,
    _finalize,
    _shrinkage_from_cov,
    c_spread,
    power_shrinkage_asymptotic,
    shrinkage_decision,
)
from .errors import InputError
from .model import (
    CovarianceModel,
    PortfolioWeights,
    ReturnsMatrix,
    as_returns,
    as_weights,
    sample_covariance,
    selection_matrix,
    spd_quadratic_form,
)

__all__ = [
    "Standardization",
    "SingularTestConfig",
    "BonferroniOutcome",
    "mahalanobis_statistic_singular",
    "mahalanobis_singular_decision",
    "mahalanobis_test_singular",
    "power_singular_asymptotic",
    "shrinkage_intensity_singular",
    "shrinkage_test_singular",
    "power_shrinkage_singular",
    "bonferroni_full_test",
]


class Standardization(str, Enum):
    """Normalisation of the rank-deficient Mahalanobis statistic.

    ``GENERAL`` scales by ``sqrt(k)`` with null variance
    ``2(1 - c + b)/(1 - c)`` (``c = q/n``, ``b = k/n``). ``LITERAL`` scales by
    ``sqrt(q - 1)`` with null variance ``2/(1 - c)``, reproducing the
    full-rank rule with ``p`` replaced by ``q``.
    """

    GENERAL = "general"
    LITERAL = "literal"


@dataclass(frozen=True)
class SingularTestConfig:
    """Rank ``q`` and the ``k x p`` matrix ``L`` of linear combinations under test."""

    q: int
    L: NDArray[np.float64]
    alpha: float = 0.05
    standardization: Standardization = Standardization.GENERAL

    def __post_init__(self) -> None:
        L = np.atleast_2d(np.asarray(self.L, dtype=np.float64))
        if L.ndim != 2 or L.shape[0] < 1:
            raise InputError("L must be a k x p matrix with k >= 1")
        q = int(self.q)
        if q < 1:
            raise InputError("rank q must be at least 1")
        if L.shape[0] > q:
            raise InputError(f"k={L.shape[0]} exceeds the rank q={q}")
        if q > L.shape[1]:
            raise InputError(f"rank q={q} exceeds the dimension p={L.shape[1]}")
        if not np.all(np.isfinite(L)) or np.linalg.matrix_rank(L) != L.shape[0]:
            raise InputError("L must be finite with full row rank")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        object.__setattr__(self, "standardization", Standardization(self.standardization))

    @property
    def k(self) -> int:
        return self.L.shape[0]

    @property
    def p(self) -> int:
        return self.L.shape[1]

    @classmethod
    def leading(
        cls,
        p: int,
        q: int,
        k: int | None = None,
        alpha: float = 0.05,
        standardization: Standardization | str = Standardization.GENERAL,
    ) -> SingularTestConfig:
        """Test the first ``k`` weights (default ``k = min(q, p) - 1``, at least 1)."""
        if k is None:
            k = max(min(q, p) - 1, 1)
        return cls(q, selection_matrix(p, np.arange(k)), alpha, Standardization(standardization))


def _singular_inputs(returns, p_expected: int, q: int) -> ReturnsMatrix:
    x = as_returns(returns)
    if x.p != p_expected:
        raise InputError(f"returns have {x.p} columns, expected {p_expected}")
    if x.n <= q:
        raise InputError(f"need n > q, got n={x.n}, q={q}")
    return x


def _mp_sample_cov(x: ReturnsMatrix, q: int) -> CovarianceModel:
    return sample_covariance(x, rank=q)


def _mahalanobis_singular_from_cov(
    cov: CovarianceModel, L: NDArray[np.float64], r_star: NDArray[np.float64], n: int
) -> float:
    prec = cov.precision
    v = prec.sum(axis=1)
    s = float(v.sum())
    Lv = L @ v
    q_star = L @ prec @ L.T - np.outer(Lv, Lv) / s
    d = Lv / s - r_star
    k = L.shape[0]
    return (n - cov.rank) / k * s * spd_quadratic_form(0.5 * (q_star + q_star.T), d)


def mahalanobis_statistic_singular(
    returns: ReturnsMatrix | ArrayLike, config: SingularTestConfig, r_star: ArrayLike
) -> float:
    """Moore-Penrose Mahalanobis statistic for ``H0: L w_GMVP = r_star``.

    ``(n-q)/k * (1'S^+ 1) * d' (Q~*)^-1 d`` with ``d = L w_hat - r_star`` and
    ``Q~* = L S^+ L' - L S^+ 1 1' S^+ L' / (1'S^+ 1)``.
    """
    x = _singular_inputs(returns, config.p, config.q)
    r_star = np.atleast_1d(np.asarray(r_star, dtype=np.float64))
    if r_star.size != config.k:
        raise InputError(f"r_star must have k={config.k} entries")
    cov = _mp_sample_cov(x, config.q)
    return _mahalanobis_singular_from_cov(cov, config.L, r_star, x.n)


def _singular_standardize(t: float, q: int, k: int, n: int, standardization: Standardization) -> float:
    c = q / n
    if standardization is Standardization.LITERAL:
        return math.sqrt(q - 1) * (t - 1.0) / math.sqrt(2.0 / (1.0 - c))
    b = k / n
    return math.sqrt(k) * (t - 1.0) / math.sqrt(2.0 * (1.0 - c + b) / (1.0 - c))


def _check_dims(q: int, k: int, n: int, standardization: Standardization) -> None:
    if not n > q >= k >= 1:
        raise InputError(f"need n > q >= k >= 1, got q={q}, k={k}, n={n}")
    if standardization is Standardization.LITERAL and q < 2:
        raise InputError("the literal standardization needs q >= 2")


def mahalanobis_singular_decision(
    statistic: float,
    q: int,
    k: int,
    n: int,
    alpha: float = 0.05,
    standardization: Standardization | str = Standardization.GENERAL,
) -> TestOutcome:
    """Normal-asymptotic decision for a rank-deficient Mahalanobis statistic."""
    alpha = _check_alpha(alpha)
    standardization = Standardization(standardization)
    _check_dims(q, k, n, standardization)
    t = float(statistic)
    z = _singular_standardize(t, q, k, n, standardization)
    crit = stats.norm.isf(alpha)
    return _finalize(
        t, z, Reference.NORMAL_ASYMPTOTIC, z > crit, stats.norm.sf(z), alpha, t * k / (n - q), q / n
    )


def mahalanobis_test_singular(
    returns: ReturnsMatrix | ArrayLike, config: SingularTestConfig, r_star: ArrayLike
) -> TestOutcome:
    """Asymptotic test of ``H0: L w_GMVP = r_star`` for a rank-``q`` covariance."""
    x = as_returns(returns)
    t = mahalanobis_statistic_singular(x, config, r_star)
    return mahalanobis_singular_decision(t, config.q, config.k, x.n, config.alpha, config.standardization)


def power_singular_asymptotic(
    lambda_tilde: float,
    q: int,
    k: int,
    n: int,
    alpha: float = 0.05,
    standardization: Standardization | str = Standardization.GENERAL,
) -> float:
    """Asymptotic power of the rank-deficient Mahalanobis test.

    Under the alternative ``sqrt(k)(T~ - 1 - lam (n-q+k)/k)`` has standard
    deviation ``C~`` with

    ``C~^2 = 2 + 2 g lam^2/b + 4 g lam/b + 2 b/(1-c) (1 + g lam/b)^2``,
    ``g = 1 - c + b``.

    The ``LITERAL`` standardization uses the full-rank expression with ``q``
    in place of ``p``.
    """
    alpha = _check_alpha(alpha)
    standardization = Standardization(standardization)
    _check_dims(q, k, n, standardization)
    if lambda_tilde < 0:
        raise InputError("noncentrality must be nonnegative")
    lam = float(lambda_tilde)
    c = q / n
    z = stats.norm.isf(alpha)
    if standardization is Standardization.LITERAL:
        arg = (math.sqrt(2.0 / (1.0 - c)) * z - math.sqrt(q - 1) * lam / c) / c_spread(lam, c)
        return float(stats.norm.sf(arg))
    b = k / n
    g = 1.0 - c + b
    spread2 = 2.0 + 2.0 * g * lam * lam / b + 4.0 * g * lam / b + 2.0 * (b / (1.0 - c)) * (1.0 + g * lam / b) ** 2
    shift = math.sqrt(k) * lam * (n - q + k) / k
    arg = (math.sqrt(2.0 * g / (1.0 - c)) * z - shift) / math.sqrt(spread2)
    return float(stats.norm.sf(arg))


def shrinkage_intensity_singular(
    returns: ReturnsMatrix | ArrayLike, b: PortfolioWeights | ArrayLike, q: int
) -> ShrinkageEstimate:
    """Moore-Penrose relative loss and intensity estimates with ``c~ = q/n``.

    ``R_hat+ = (1 - q/n) 1'S^+ 1 b'S b - 1``.
    """
    x = as_returns(returns)
    b = as_weights(b)
    x = _singular_inputs(x, b.p, int(q))
    cov = _mp_sample_cov(x, int(q))
    return _shrinkage_from_cov(cov, b.weights, q / x.n, b)


def shrinkage_test_singular(
    returns: ReturnsMatrix | ArrayLike, r: PortfolioWeights | ArrayLike, q: int, alpha: float = 0.05
) -> TestOutcome:
    """Shrinkage test of ``H0: w_GMVP = r`` for a rank-``q`` covariance."""
    x = as_returns(returns)
    est = shrinkage_intensity_singular(x, r, q)
    return shrinkage_decision(est.alpha_hat, x.n, q / x.n, alpha)


def power_shrinkage_singular(R_plus: float, q: int, n: int, alpha: float = 0.05) -> float:
    """Asymptotic power of the Moore-Penrose shrinkage test; ``c~ = q/n`` replaces ``p/n``."""
    return power_shrinkage_asymptotic(R_plus, q, n, alpha)


@dataclass(frozen=True)
class BonferroniOutcome:
    """Family-wise decision from block-wise singular Mahalanobis tests.

    ``p_value`` is the Bonferroni-adjusted ``min(1, m * min_j p_j)`` over the
    ``m`` blocks; ``reject`` is true when any block rejects at ``alpha / m``.
    """

    blocks: tuple[TestOutcome, ...]
    block_indices: tuple[tuple[int, ...], ...]
    alpha: float
    block_alpha: float
    reject: bool
    p_value: float

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "block_alpha": self.block_alpha,
            "reject": self.reject,
            "p_value": self.p_value,
            "blocks": [
                {"indices": list(idx), **out.as_dict()} for idx, out in zip(self.block_indices, self.blocks)
            ],
        }


def bonferroni_full_test(
    returns: ReturnsMatrix | ArrayLike,
    r: PortfolioWeights | ArrayLike,
    q: int,
    alpha: float = 0.05,
    block_size: int | None = None,
    standardization: Standardization | str = Standardization.GENERAL,
) -> BonferroniOutcome:
    """Test the whole weight vector by splitting it into contiguous blocks.

    The first ``p - 1`` coordinates are cut into blocks of at most
    ``block_size`` (default ``q - 1``, at least 1) in input order; each block
    is tested at level ``alpha / m``.
    """
    x = as_returns(returns)
    r = as_weights(r)
    q = int(q)
    alpha = _check_alpha(alpha)
    if block_size is None:
        block_size = max(q - 1, 1)
    if not 1 <= block_size <= q:
        raise InputError(f"block_size must lie in [1, q={q}]")
    x = _singular_inputs(x, r.p, q)
    cov = _mp_sample_cov(x, q)
    starts = range(0, x.p - 1, block_size)
    blocks_idx = [tuple(range(s, min(s + block_size, x.p - 1))) for s in starts]
    m = len(blocks_idx)
    block_alpha = alpha / m
    outcomes = []
    for idx in blocks_idx:
        L = selection_matrix(x.p, idx)
        t = _mahalanobis_singular_from_cov(cov, L, r.weights[list(idx)], x.n)
        outcomes.append(mahalanobis_singular_decision(t, q, len(idx), x.n, block_alpha, standardization))
    reject = any(o.reject for o in outcomes)
    p_adj = min(1.0, m * min(o.p_value for o in outcomes))
    if reject and p_adj >= alpha:
        p_adj = math.nextafter(alpha, 0.0)
    elif not reject and p_adj < alpha:
        p_adj = alpha
    return BonferroniOutcome(tuple(outcomes), tuple(blocks_idx), alpha, block_alpha, reject, p_adj)
