from __future__ import annotations

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import special

from gmvptest import _kernels

pytestmark = pytest.mark.skipif(_kernels.numba_kernels is None, reason="numba not installed")


def test_tn_transform_parity(rng):
    args = (rng.standard_normal(1000), rng.chisquare(40, 1000), rng.chisquare(49, 1000), rng.chisquare(8, 1000))
    a = _kernels.numpy_kernels.tn_transform(*args, 0.3, 40 / 9)
    b = _kernels.numba_kernels.tn_transform(*args, 0.3, 40 / 9)
    np.testing.assert_allclose(a, b, rtol=1e-14)


@pytest.mark.parametrize("a,b,c", [(24.5, 24.5, 2.0), (0.5, 1.5, 3.0), (3.0, 2.0, 7.5)])
def test_hyp2f1_parity_and_accuracy(a, b, c):
    z = np.linspace(0.0, 0.8, 17)
    np_vals = _kernels.numpy_kernels.hyp2f1_series(a, b, c, z)
    nb_vals = _kernels.numba_kernels.hyp2f1_series(a, b, c, z)
    np.testing.assert_allclose(np_vals, nb_vals, rtol=1e-13)
    np.testing.assert_allclose(np_vals, special.hyp2f1(a, b, c, z), rtol=1e-11)


def test_count_below_parity(rng):
    values = np.sort(rng.uniform(size=5000))
    thresholds = np.concatenate([np.linspace(0, 1, 101), values[:5]])
    a = _kernels.numpy_kernels.count_below(values, thresholds)
    b = _kernels.numba_kernels.count_below(values, thresholds)
    assert np.array_equal(a, b)
    assert np.array_equal(a, [np.sum(values < t) for t in thresholds])


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, GMVPTEST_DISABLE_NUMBA="1")
    code = "from gmvptest import _kernels; print(_kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_numpy_backend_gives_same_sampler_draws():
    code = (
        "import json; from gmvptest.simulation import sample_tn_stochastic, RngStream;"
        "print(json.dumps(sample_tn_stochastic(0.3, 8, 60, RngStream(5), size=4).tolist()))"
    )
    outs = []
    for flag in ("1", "0"):
        env = dict(os.environ, GMVPTEST_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append(np.array(json.loads(res.stdout)))
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-14)
