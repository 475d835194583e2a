"""Numeric kernels for the two-layer predictor and its inner training loop.

Two interchangeable backends are built from the same source: a numba
``@njit`` backend and a pure-numpy one. The numpy path is the reference;
the numba path exists because the full-batch gradient-descent loop is the
hot spot of every retraining run. Selection happens once at import:

* ``PERFORMA_NUMBA=0`` (or numba missing) -> pure numpy,
* anything else -> numba-compiled.

``PY`` and ``NUMBA`` expose both backends for benchmarking regardless of
which one is active.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np


def _numba_requested() -> bool:
    flag = os.environ.get("PERFORMA_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


def _load_njit():
    try:
        from numba import njit
    except ImportError:
        return None
    return njit


def _build(jit):
    """Construct one kernel set under the given compilation decorator."""

    def mlp_forward(w1, b1, w2, b2, slope, delta, X):
        # (1-delta) * sigmoid(w2 . leaky_relu(w1 x + b1) + b2), batched over rows of X.
        w1t = np.ascontiguousarray(w1.T)
        A = X @ w1t + b1
        H = np.where(A > 0.0, A, slope * A)
        U = H @ w2 + b2
        e = np.exp(-np.abs(U))
        S = np.where(U >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (1.0 - delta) * S

    mlp_forward = jit(mlp_forward)

    def weighted_risk(w1, b1, w2, b2, slope, delta, X, y, wts):
        preds = mlp_forward(w1, b1, w2, b2, slope, delta, X)
        r = preds - y
        return 0.5 * np.sum(wts * r * r)

    weighted_risk = jit(weighted_risk)

    def value_and_grad(w1, b1, w2, b2, slope, delta, X, y, wts):
        # Risk sum_i w_i * 0.5*(f(x_i)-y_i)^2 and its exact gradient in the
        # network parameters.
        w1t = np.ascontiguousarray(w1.T)
        A = X @ w1t + b1
        H = np.where(A > 0.0, A, slope * A)
        U = H @ w2 + b2
        e = np.exp(-np.abs(U))
        S = np.where(U >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
        F = (1.0 - delta) * S
        resid = F - y
        risk = 0.5 * np.sum(wts * resid * resid)
        # d risk / d U_i, shared by every parameter gradient below.
        R = wts * resid * (1.0 - delta) * S * (1.0 - S)
        gw2 = R @ H
        gb2 = np.sum(R)
        T = np.where(A > 0.0, 1.0, slope) * (R.reshape(-1, 1) * w2.reshape(1, -1))
        gw1 = np.ascontiguousarray(T.T) @ X
        gb1 = np.sum(T, axis=0)
        return risk, gw1, gb1, gw2, gb2

    value_and_grad = jit(value_and_grad)

    def gd_minimize(w1, b1, w2, b2, slope, delta, X, y, wts,
                    lr, tol, max_steps, backtrack):
        # Full-batch gradient descent; stops when the risk difference of two
        # consecutive steps falls below tol. With backtracking the step
        # size adapts: doubled after each accepted step, then halved until
        # the Armijo condition (c = 1e-4) holds, which keeps the risk
        # sequence nonincreasing and reaches tight tolerances even where
        # the scaled-sigmoid head makes gradients small.
        # Status: 0 = ok, 1 = non-finite risk encountered.
        w1 = w1.copy()
        b1 = b1.copy()
        w2 = w2.copy()
        risk, g1, gb1, g2, gb2 = value_and_grad(
            w1, b1, w2, b2, slope, delta, X, y, wts)
        steps = 0
        t = lr
        for _ in range(max_steps):
            gn2 = (np.sum(g1 * g1) + np.sum(gb1 * gb1)
                   + np.sum(g2 * g2) + gb2 * gb2)
            if backtrack:
                t *= 2.0
                while t > 2.0 ** -60:
                    trial = weighted_risk(
                        w1 - t * g1, b1 - t * gb1, w2 - t * g2, b2 - t * gb2,
                        slope, delta, X, y, wts)
                    if trial <= risk - 1e-4 * t * gn2:
                        break
                    t *= 0.5
            else:
                t = lr
            w1 -= t * g1
            b1 -= t * gb1
            w2 -= t * g2
            b2 -= t * gb2
            new_risk, g1, gb1, g2, gb2 = value_and_grad(
                w1, b1, w2, b2, slope, delta, X, y, wts)
            steps += 1
            if not np.isfinite(new_risk):
                return w1, b1, w2, b2, new_risk, steps, 1
            done = abs(new_risk - risk) < tol
            risk = new_risk
            if done:
                break
        return w1, b1, w2, b2, risk, steps, 0

    gd_minimize = jit(gd_minimize)

    return SimpleNamespace(
        mlp_forward=mlp_forward,
        weighted_risk=weighted_risk,
        value_and_grad=value_and_grad,
        gd_minimize=gd_minimize,
    )


_njit = _load_njit()

PY = _build(lambda f: f)
NUMBA = _build(_njit(cache=True, nogil=True)) if _njit is not None else None

USE_NUMBA = NUMBA is not None and _numba_requested()
ACTIVE = NUMBA if USE_NUMBA else PY

mlp_forward = ACTIVE.mlp_forward
weighted_risk = ACTIVE.weighted_risk
value_and_grad = ACTIVE.value_and_grad
gd_minimize = ACTIVE.gd_minimize
