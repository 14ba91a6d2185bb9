"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with identical semantics. The module-level names point at the numba
versions unless numba is missing or ``GMVPTEST_DISABLE_NUMBA`` is set to a
truthy value, in which case they point at the numpy versions. Both sets stay
importable (``numba_kernels`` / ``numpy_kernels``) so tests and the benchmark
can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_FLAG = os.environ.get("GMVPTEST_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False


# --------------------------------------------------------------------------
# pure numpy
# --------------------------------------------------------------------------


def _tn_transform_np(omega, xi2, xi3, xi4, lam, ratio):
    return ratio * ((np.sqrt(lam * xi3) + omega) ** 2 + xi4) / xi2


def _hyp2f1_series_np(a, b, c, z, tol=1e-14, max_terms=100_000):
    z = np.asarray(z, dtype=np.float64)
    total = np.ones_like(z)
    term = np.ones_like(z)
    active = np.ones(z.shape, dtype=bool)
    for i in range(max_terms):
        if not active.any():
            break
        ratio = (a + i) * (b + i) / ((c + i) * (i + 1.0)) * z
        term = np.where(active, term * ratio, 0.0)
        total = total + term
        # past the peak of the term sequence and below tolerance
        done = (ratio < 1.0) & (np.abs(term) < tol * np.abs(total))
        active &= ~done
    return total


def _count_below_np(sorted_values, thresholds):
    return np.searchsorted(sorted_values, thresholds, side="left").astype(np.int64)


numpy_kernels = SimpleNamespace(
    tn_transform=_tn_transform_np,
    hyp2f1_series=_hyp2f1_series_np,
    count_below=_count_below_np,
)


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _tn_transform_nb(omega, xi2, xi3, xi4, lam, ratio):
        out = np.empty(omega.shape[0])
        for i in range(omega.shape[0]):
            shift = np.sqrt(lam * xi3[i]) + omega[i]
            out[i] = ratio * (shift * shift + xi4[i]) / xi2[i]
        return out

    @njit(cache=True)
    def _hyp2f1_series_nb_flat(a, b, c, z, tol, max_terms):
        out = np.empty(z.shape[0])
        for j in range(z.shape[0]):
            total = 1.0
            term = 1.0
            for i in range(max_terms):
                ratio = (a + i) * (b + i) / ((c + i) * (i + 1.0)) * z[j]
                term *= ratio
                total += term
                if ratio < 1.0 and abs(term) < tol * abs(total):
                    break
            out[j] = total
        return out

    @njit(cache=True)
    def _count_below_nb(sorted_values, thresholds):
        out = np.empty(thresholds.shape[0], dtype=np.int64)
        m = sorted_values.shape[0]
        for j in range(thresholds.shape[0]):
            lo, hi = 0, m
            t = thresholds[j]
            while lo < hi:
                mid = (lo + hi) // 2
                if sorted_values[mid] < t:
                    lo = mid + 1
                else:
                    hi = mid
            out[j] = lo
        return out

    def _tn_transform_nb_wrap(omega, xi2, xi3, xi4, lam, ratio):
        arrays = np.broadcast_arrays(
            np.asarray(omega, dtype=np.float64),
            np.asarray(xi2, dtype=np.float64),
            np.asarray(xi3, dtype=np.float64),
            np.asarray(xi4, dtype=np.float64),
        )
        shape = arrays[0].shape
        flat = [np.ascontiguousarray(x).ravel() for x in arrays]
        return _tn_transform_nb(*flat, float(lam), float(ratio)).reshape(shape)

    def _hyp2f1_series_nb(a, b, c, z, tol=1e-14, max_terms=100_000):
        z = np.asarray(z, dtype=np.float64)
        flat = np.ascontiguousarray(z).ravel()
        res = _hyp2f1_series_nb_flat(float(a), float(b), float(c), flat, float(tol), int(max_terms))
        return res.reshape(z.shape)

    def _count_below_nb_wrap(sorted_values, thresholds):
        return _count_below_nb(
            np.ascontiguousarray(sorted_values, dtype=np.float64),
            np.ascontiguousarray(thresholds, dtype=np.float64),
        )

    numba_kernels = SimpleNamespace(
        tn_transform=_tn_transform_nb_wrap,
        hyp2f1_series=_hyp2f1_series_nb,
        count_below=_count_below_nb_wrap,
    )
else:  # pragma: no cover
    numba_kernels = None


if HAS_NUMBA and not NUMBA_DISABLED:
    BACKEND = "numba"
    _active = numba_kernels
else:
    BACKEND = "numpy"
    _active = numpy_kernels

tn_transform = _active.tn_transform
hyp2f1_series = _active.hyp2f1_series
count_below = _active.count_below
