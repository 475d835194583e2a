"""Backend equivalence: the numba kernels and the pure-numpy fallback
must be interchangeable."""

import os
import subprocess
import sys

import numpy as np
import pytest

from performa import kernels


def _problem(seed=0, n=64, d=7, h=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.choice([0.0, 0.1], size=n)
    w = rng.random(n)
    w /= w.sum()
    w1 = rng.normal(size=(h, d)) * 0.4
    b1 = rng.normal(size=h) * 0.1
    w2 = rng.normal(size=h) * 0.4
    return X, y, w, w1, b1, w2, 0.05


@pytest.mark.skipif(kernels.NUMBA is None, reason="numba not installed")
class TestBackendAgreement:
    def test_forward(self):
        X, y, w, w1, b1, w2, b2 = _problem()
        out_py = kernels.PY.mlp_forward(w1, b1, w2, b2, 0.01, 0.9, X)
        out_nb = kernels.NUMBA.mlp_forward(w1, b1, w2, b2, 0.01, 0.9, X)
        np.testing.assert_allclose(out_py, out_nb, rtol=1e-13, atol=1e-15)

    def test_value_and_grad(self):
        X, y, w, w1, b1, w2, b2 = _problem(1)
        got_py = kernels.PY.value_and_grad(w1, b1, w2, b2, 0.01, 0.9, X, y, w)
        got_nb = kernels.NUMBA.value_and_grad(w1, b1, w2, b2, 0.01, 0.9, X, y, w)
        for a, b in zip(got_py, got_nb):
            np.testing.assert_allclose(np.asarray(a), np.asarray(b),
                                       rtol=1e-12, atol=1e-16)

    def test_gd_minimize_same_trajectory(self):
        X, y, w, w1, b1, w2, b2 = _problem(2)
        args = (w1, b1, w2, b2, 0.01, 0.9, X, y, w, 0.1, 1e-12, 300, True)
        got_py = kernels.PY.gd_minimize(*args)
        got_nb = kernels.NUMBA.gd_minimize(*args)
        assert got_py[5] == got_nb[5]          # same step count
        np.testing.assert_allclose(got_py[4], got_nb[4], rtol=1e-10)
        for a, b in zip(got_py[:4], got_nb[:4]):
            np.testing.assert_allclose(np.asarray(a), np.asarray(b),
                                       rtol=1e-9, atol=1e-12)


class TestGdBehavior:
    def test_zero_gradient_stops_after_one_step(self):
        # prediction equals the target everywhere -> stationary point
        X = np.array([[1.0, -2.0]])
        w1 = np.zeros((3, 2))
        b1 = np.zeros(3)
        w2 = np.zeros(3)
        y = kernels.mlp_forward(w1, b1, w2, 0.0, 0.01, 0.9, X)
        w = np.array([1.0])
        r1, rb1, r2, rb2, risk, steps, status = kernels.gd_minimize(
            w1, b1, w2, 0.0, 0.01, 0.9, X, y, w, 0.1, 1e-9, 500, True)
        assert status == 0
        assert steps == 1
        assert risk == 0.0
        np.testing.assert_array_equal(r1, w1)

    def test_backtracking_risk_monotone(self):
        X, y, w, w1, b1, w2, b2 = _problem(3)
        risks = []
        cur = (w1, b1, w2, b2)
        for _ in range(150):
            *params, risk, steps, status = kernels.gd_minimize(
                *cur, 0.01, 0.9, X, y, w, 0.5, 0.0, 1, True)
            assert status == 0
            risks.append(risk)
            cur = tuple(params)
        assert all(b <= a + 1e-18 for a, b in zip(risks, risks[1:]))

    def test_max_steps_respected(self):
        X, y, w, w1, b1, w2, b2 = _problem(4)
        out = kernels.gd_minimize(w1, b1, w2, b2, 0.01, 0.9, X, y, w,
                                  0.1, 0.0, 7, True)
        assert out[5] == 7


def test_env_flag_selects_numpy_backend():
    code = ("import performa.kernels as k; "
            "print(k.USE_NUMBA, k.ACTIVE is k.PY)")
    env = dict(os.environ, PERFORMA_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]
