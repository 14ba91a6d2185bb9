"""Covariance models, (pseudo-)inversion, GMVP weights and effect sizes.

Everything here is a pure function of its inputs. The eigendecomposition of a
covariance matrix is computed once when the :class:`CovarianceModel` is
built; inverses, Moore-Penrose inverses and the GMVP quantities are derived
from it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateError, InputError, RankWarning

__all__ = [
    "EffectKind",
    "EffectSize",
    "InverseKind",
    "WeightSource",
    "ReturnsMatrix",
    "CovarianceModel",
    "PortfolioWeights",
    "as_returns",
    "as_weights",
    "covariance_model",
    "sample_covariance",
    "pseudo_inverse",
    "gmvp_weights",
    "q_matrix",
    "lambda_dense",
    "lambda_singular",
    "relative_loss",
    "selection_matrix",
    "spd_quadratic_form",
]

WEIGHT_SUM_ATOL = 1e-10
SYMMETRY_RTOL = 1e-6
CONDITION_FLOOR = 1e-12


class InverseKind(str, Enum):
    CLASSICAL = "classical"
    MOORE_PENROSE = "moore_penrose"


class WeightSource(str, Enum):
    POPULATION = "population"
    SAMPLE = "sample"
    SAMPLE_MOORE_PENROSE = "sample_moore_penrose"


class EffectKind(str, Enum):
    LAMBDA_DENSE = "lambda_dense"
    RELATIVE_LOSS = "relative_loss"
    LAMBDA_SINGULAR = "lambda_singular"
    RELATIVE_LOSS_MP = "relative_loss_mp"


@dataclass(frozen=True)
class EffectSize:
    kind: EffectKind
    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or self.value < 0:
            raise InputError(f"effect size must be finite and nonnegative, got {self.value}")

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class ReturnsMatrix:
    """An ``n x p`` panel of asset returns, rows are observations."""

    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InputError("returns must be a two-dimensional array (n observations x p assets)")
        n, p = data.shape
        if n < 2 or p < 2:
            raise InputError(f"returns need n >= 2 and p >= 2, got n={n}, p={p}")
        if not np.all(np.isfinite(data)):
            raise InputError("returns contain non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


def as_returns(returns: ReturnsMatrix | ArrayLike) -> ReturnsMatrix:
    if isinstance(returns, ReturnsMatrix):
        return returns
    return ReturnsMatrix(np.asarray(returns, dtype=np.float64))


@dataclass(frozen=True)
class PortfolioWeights:
    weights: NDArray[np.float64]
    source: WeightSource = WeightSource.POPULATION

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 2:
            raise InputError("weights must be a vector with at least two entries")
        if not np.all(np.isfinite(w)):
            raise InputError("weights contain non-finite entries")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_ATOL:
            raise InputError(f"weights must sum to 1 (got {w.sum():.17g})")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "source", WeightSource(self.source))

    @property
    def p(self) -> int:
        return self.weights.size


def as_weights(w: PortfolioWeights | ArrayLike) -> PortfolioWeights:
    if isinstance(w, PortfolioWeights):
        return w
    return PortfolioWeights(np.asarray(w, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Symmetric PSD matrix with its eigendecomposition and working rank.

    ``eigenvalues`` are nonincreasing and ``eigenvectors[:, i]`` belongs to
    ``eigenvalues[i]``. Only the leading ``rank`` eigenpairs enter the
    (pseudo-)inverse.
    """

    matrix: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]
    rank: int
    inverse_kind: InverseKind
    is_sample: bool = field(default=False)

    def __post_init__(self) -> None:
        p = self.matrix.shape[0]
        if not 0 <= self.rank <= p:
            raise InputError(f"rank must lie in [0, {p}], got {self.rank}")
        if self.inverse_kind is InverseKind.CLASSICAL and self.rank != p:
            raise InputError("a classical inverse requires full rank; use the Moore-Penrose kind")
        if self.rank and np.any(self.eigenvalues[: self.rank] <= 0):
            raise DegenerateError("retained eigenvalues must be strictly positive")

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def retained(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return self.eigenvalues[: self.rank], self.eigenvectors[:, : self.rank]

    @cached_property
    def precision(self) -> NDArray[np.float64]:
        """Classical or Moore-Penrose inverse of ``matrix``."""
        if self.rank == 0:
            raise DegenerateError("covariance matrix has rank 0; no pseudo-inverse")
        vals, vecs = self.retained
        inv = (vecs / vals) @ vecs.T
        return 0.5 * (inv + inv.T)

    @cached_property
    def root(self) -> NDArray[np.float64]:
        """Factor ``F`` (``p x rank``) with ``F F' = matrix``."""
        vals, vecs = self.retained
        return vecs * np.sqrt(vals)

    def scaled(self, factor: float) -> CovarianceModel:
        if factor <= 0:
            raise InputError("scale factor must be positive")
        return CovarianceModel(
            self.matrix * factor,
            self.eigenvalues * factor,
            self.eigenvectors,
            self.rank,
            self.inverse_kind,
            self.is_sample,
        )

    @classmethod
    def from_spectrum(
        cls,
        eigenvalues: ArrayLike,
        eigenvectors: ArrayLike,
        rank: int | None = None,
        inverse_kind: InverseKind | str | None = None,
    ) -> CovarianceModel:
        """Build ``V diag(l) V'`` directly from a known spectrum."""
        vals = np.asarray(eigenvalues, dtype=np.float64)
        vecs = np.asarray(eigenvectors, dtype=np.float64)
        if vecs.shape != (vals.size, vals.size):
            raise InputError("eigenvectors must be a square matrix matching the eigenvalues")
        if np.any(vals < 0):
            raise InputError("a covariance spectrum cannot contain negative eigenvalues")
        order = np.argsort(-vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
        matrix = (vecs * vals) @ vecs.T
        matrix = 0.5 * (matrix + matrix.T)
        detected = _numerical_rank(vals, vals.size)
        return _finish(matrix, vals, vecs, detected, rank, inverse_kind, is_sample=False)


def _numerical_rank(vals: NDArray[np.float64], p: int, tol: float | None = None) -> int:
    top = max(float(vals[0]), 0.0) if vals.size else 0.0
    if tol is None:
        tol = p * np.finfo(np.float64).eps * top
    return int(np.sum(vals > tol))


def _finish(matrix, vals, vecs, detected, rank, inverse_kind, is_sample) -> CovarianceModel:
    p = matrix.shape[0]
    if rank is None:
        rank = detected
    else:
        rank = int(rank)
        if not 0 <= rank <= p:
            raise InputError(f"declared rank must lie in [0, {p}], got {rank}")
        if rank != detected:
            warnings.warn(
                f"declared rank {rank} differs from numerical rank {detected}; using {rank}",
                RankWarning,
                stacklevel=3,
            )
        if rank and vals[rank - 1] <= 0:
            raise DegenerateError(f"declared rank {rank} exceeds the number of positive eigenvalues")
    if inverse_kind is None:
        kind = InverseKind.CLASSICAL if rank == p else InverseKind.MOORE_PENROSE
    else:
        kind = InverseKind(inverse_kind)
    return CovarianceModel(matrix, vals, vecs, rank, kind, is_sample)


def covariance_model(
    matrix: ArrayLike,
    rank: int | None = None,
    tol: float | None = None,
    inverse_kind: InverseKind | str | None = None,
    *,
    is_sample: bool = False,
) -> CovarianceModel:
    """Wrap a symmetric PSD matrix.

    Parameters
    ----------
    matrix : array_like
        ``p x p`` matrix; symmetrized as ``(M + M') / 2``.
    rank : int, optional
        Working rank. Overrides the detected numerical rank (a
        :class:`RankWarning` is emitted when they disagree).
    tol : float, optional
        Eigenvalue threshold for the numerical rank, default
        ``p * eps * max_eigenvalue``.
    inverse_kind : {"classical", "moore_penrose"}, optional
        Defaults to classical for full rank, Moore-Penrose otherwise.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InputError("covariance matrix must be square")
    if not np.all(np.isfinite(m)):
        raise InputError("covariance matrix contains non-finite entries")
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale > 0 and float(np.max(np.abs(m - m.T))) > SYMMETRY_RTOL * scale:
        raise InputError("covariance matrix is not symmetric")
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    vals, vecs = vals[::-1].copy(), vecs[:, ::-1].copy()
    detected = _numerical_rank(vals, m.shape[0], tol)
    return _finish(m, vals, vecs, detected, rank, inverse_kind, is_sample)


def sample_covariance(returns: ReturnsMatrix | ArrayLike, rank: int | None = None) -> CovarianceModel:
    """Unbiased (``1/(n-1)``) sample covariance of demeaned returns."""
    x = as_returns(returns).data
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (x.shape[0] - 1)
    return covariance_model(cov, rank=rank, is_sample=True)


def pseudo_inverse(cov: CovarianceModel) -> CovarianceModel:
    """Moore-Penrose inverse, returned as a covariance model of the same rank."""
    if cov.rank == 0:
        raise DegenerateError("covariance matrix has rank 0; no pseudo-inverse")
    vals, vecs = cov.retained
    inv_vals = np.concatenate([1.0 / vals[::-1], np.zeros(cov.p - cov.rank)])
    inv_vecs = np.concatenate([vecs[:, ::-1], cov.eigenvectors[:, cov.rank :]], axis=1)
    return CovarianceModel(cov.precision, inv_vals, inv_vecs, cov.rank, cov.inverse_kind, cov.is_sample)


def _ones_precision(cov: CovarianceModel) -> tuple[NDArray[np.float64], float]:
    prec = cov.precision
    v = prec.sum(axis=1)
    s = float(v.sum())
    if not s > CONDITION_FLOOR * float(np.max(np.abs(prec))):
        raise DegenerateError("1' Sigma^+ 1 is numerically zero: the vector of ones is orthogonal to the column space")
    return v, s


def gmvp_weights(cov: CovarianceModel) -> PortfolioWeights:
    """``Sigma^{-1} 1 / (1' Sigma^{-1} 1)`` (Moore-Penrose analogue if singular)."""
    v, s = _ones_precision(cov)
    w = v / s
    # remove the last rounding residue so the weights pass the 1e-10 check exactly
    w[np.argmax(np.abs(w))] += 1.0 - w.sum()
    if not cov.is_sample:
        source = WeightSource.POPULATION
    elif cov.inverse_kind is InverseKind.CLASSICAL:
        source = WeightSource.SAMPLE
    else:
        source = WeightSource.SAMPLE_MOORE_PENROSE
    return PortfolioWeights(w, source)


def q_matrix(cov: CovarianceModel) -> NDArray[np.float64]:
    """``Q = Sigma^{-1} - Sigma^{-1} 1 1' Sigma^{-1} / (1' Sigma^{-1} 1)``."""
    v, s = _ones_precision(cov)
    q = cov.precision - np.outer(v, v) / s
    return 0.5 * (q + q.T)


def spd_quadratic_form(matrix: NDArray[np.float64], vec: NDArray[np.float64]) -> float:
    """``vec' matrix^{-1} vec`` for a symmetric positive definite ``matrix``.

    Raises DegenerateError when the matrix is not numerically positive
    definite.
    """
    k = matrix.shape[0]
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("matrix is not positive definite") from exc
    diag = np.abs(np.diag(chol))
    if diag.min() ** 2 <= k * np.finfo(np.float64).eps * diag.max() ** 2 * 10:
        raise DegenerateError("matrix is numerically singular")
    y = np.linalg.solve(chol, vec)
    return float(y @ y)


def selection_matrix(p: int, indices) -> NDArray[np.float64]:
    """Rows of ``I_p`` picked by ``indices`` (a ``k x p`` selection matrix)."""
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if idx.size == 0 or idx.min() < 0 or idx.max() >= p:
        raise InputError(f"indices must be a nonempty subset of range({p})")
    if np.unique(idx).size != idx.size:
        raise InputError("indices must be distinct")
    out = np.zeros((idx.size, p))
    out[np.arange(idx.size), idx] = 1.0
    return out


def lambda_dense(cov: CovarianceModel, r: PortfolioWeights | ArrayLike) -> EffectSize:
    """Noncentrality ``1'S^-1 1 (w* - r*)' (Q*)^-1 (w* - r*)``; ``*`` drops the last asset."""
    r = as_weights(r)
    if cov.rank != cov.p:
        raise InputError("lambda_dense needs a full-rank covariance matrix; use lambda_singular")
    if r.p != cov.p:
        raise InputError("dimension mismatch between covariance matrix and weights")
    w = gmvp_weights(cov).weights
    _, s = _ones_precision(cov)
    q = q_matrix(cov)
    d = (w - r.weights)[:-1]
    value = s * spd_quadratic_form(q[:-1, :-1], d)
    return EffectSize(EffectKind.LAMBDA_DENSE, max(value, 0.0))


def lambda_singular(cov: CovarianceModel, L: ArrayLike, r_star: ArrayLike) -> EffectSize:
    """Moore-Penrose noncentrality for the linear combinations ``L w``."""
    L = np.atleast_2d(np.asarray(L, dtype=np.float64))
    r_star = np.atleast_1d(np.asarray(r_star, dtype=np.float64))
    k = L.shape[0]
    if L.shape[1] != cov.p:
        raise InputError("L must have p columns")
    if r_star.size != k:
        raise InputError("r_star must have one entry per row of L")
    if k > cov.rank:
        raise InputError(f"k={k} linear combinations exceed the rank q={cov.rank}")
    if np.linalg.matrix_rank(L) != k:
        raise InputError("L must have full row rank")
    v, s = _ones_precision(cov)
    Lv = L @ v
    q_star = L @ cov.precision @ L.T - np.outer(Lv, Lv) / s
    d = Lv / s - r_star
    value = s * spd_quadratic_form(0.5 * (q_star + q_star.T), d)
    return EffectSize(EffectKind.LAMBDA_SINGULAR, max(value, 0.0))


def relative_loss(cov: CovarianceModel, b: PortfolioWeights | ArrayLike) -> EffectSize:
    """Relative excess variance ``(1' S^+ 1)(b' S b) - 1`` of a target portfolio."""
    b = as_weights(b)
    if b.p != cov.p:
        raise InputError("dimension mismatch between covariance matrix and weights")
    _, s = _ones_precision(cov)
    value = s * float(b.weights @ cov.matrix @ b.weights) - 1.0
    if value < -1e-8:
        raise InputError(
            "target variance is below the GMVP variance; the target leaves the column space of Sigma"
        )
    kind = EffectKind.RELATIVE_LOSS if cov.inverse_kind is InverseKind.CLASSICAL else EffectKind.RELATIVE_LOSS_MP
    return EffectSize(kind, max(value, 0.0))
