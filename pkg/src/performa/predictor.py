"""Two-layer predictor with a scaled-sigmoid head, exact gradients, and
weighted functional norms.

The prediction function is

    f(x) = (1 - delta) * sigmoid(w2 . leaky_relu(w1 x + b1) + b2)

so outputs live in (0, 1-delta) (the endpoints are reached only at
float64 saturation), which makes f(x) + delta a valid rejection
probability for the resample-if-rejected shift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import kernels
from .errors import ShapeError

PARAMS_FORMAT_VERSION = 1

#: Anything usable as a prediction function: parameter struct or a plain
#: callable mapping an (n, d) matrix to an (n,) vector.
PredictorLike = Union["PredictorParams", Callable[[np.ndarray], np.ndarray]]


@dataclass
class PredictorParams:
    """Parameters of the two-layer network, plus the output cap delta."""

    w1: np.ndarray            # (hidden_size, input_dim)
    b1: np.ndarray            # (hidden_size,)
    w2: np.ndarray            # (hidden_size,)
    b2: float
    leaky_slope: float = 0.01
    delta: float = 0.9

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        if self.w1.ndim != 2 or self.b1.ndim != 1 or self.w2.ndim != 1:
            raise ShapeError("w1 must be 2-D, b1 and w2 1-D")
        h = self.w1.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ShapeError(
                f"inconsistent hidden size: w1 {self.w1.shape}, "
                f"b1 {self.b1.shape}, w2 {self.w2.shape}")
        for arr in (self.w1, self.b1, self.w2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters must be finite")
        if not np.isfinite(self.b2):
            raise ValueError("parameters must be finite")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.leaky_slope <= 0.0:
            raise ValueError("leaky_slope must be positive")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.w1.copy(), self.b1.copy(), self.w2.copy(),
                               self.b2, self.leaky_slope, self.delta)

    def to_dict(self) -> dict:
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "w1": self.w1.tolist(),            # row-major
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
            "leaky_slope": self.leaky_slope,
            "delta": self.delta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "PredictorParams":
        version = doc.get("format_version")
        if version != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version: {version!r}")
        return cls(np.array(doc["w1"]), np.array(doc["b1"]), np.array(doc["w2"]),
                   doc["b2"], doc["leaky_slope"], doc["delta"])

    @classmethod
    def from_json(cls, text: str) -> "PredictorParams":
        return cls.from_dict(json.loads(text))


@dataclass
class WeightedSample:
    """One atom of a weighted empirical distribution."""

    x: np.ndarray
    y: float
    w: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.w < 0.0:
            raise ValueError("atom weight must be nonnegative")


@dataclass
class ParamGrads:
    """Gradient of a weighted risk, congruent to PredictorParams."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def ravel(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2, [self.b2]])


def init_params(input_dim: int, hidden_size: int, delta: float,
                rng: np.random.Generator, scale: float = 1.0,
                leaky_slope: float = 0.01) -> PredictorParams:
    """Seeded uniform initialization in [-a, a], a = sqrt(6/(fan_in+fan_out))."""
    a1 = np.sqrt(6.0 / (input_dim + hidden_size)) * scale
    a2 = np.sqrt(6.0 / (hidden_size + 1)) * scale
    return PredictorParams(
        w1=rng.uniform(-a1, a1, size=(hidden_size, input_dim)),
        b1=rng.uniform(-a1, a1, size=hidden_size),
        w2=rng.uniform(-a2, a2, size=hidden_size),
        b2=rng.uniform(-a2, a2),
        leaky_slope=leaky_slope,
        delta=delta,
    )


def forward_batch(params: PredictorParams, X: np.ndarray) -> np.ndarray:
    """Predictions for each row of X; values in (0, 1-delta)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise ShapeError(
            f"expected input_dim {params.input_dim}, got {X.shape[1]}")
    return kernels.mlp_forward(params.w1, params.b1, params.w2, params.b2,
                               params.leaky_slope, params.delta,
                               np.ascontiguousarray(X))


def forward(params: PredictorParams, x: np.ndarray) -> float:
    """Prediction for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("forward expects a 1-D feature vector")
    return float(forward_batch(params, x[None, :])[0])


def predict(f: PredictorLike, X: np.ndarray) -> np.ndarray:
    """Evaluate a predictor-like object on a batch of feature rows."""
    if isinstance(f, PredictorParams):
        return forward_batch(f, X)
    out = np.asarray(f(np.atleast_2d(np.asarray(X, dtype=np.float64))),
                     dtype=np.float64)
    return out.reshape(-1)


def loss(y_hat: float, y: float) -> float:
    """Squared-error loss 0.5*(y_hat - y)^2."""
    d = y_hat - y
    return 0.5 * d * d


def loss_grad(y_hat: float, y: float) -> float:
    """Derivative of the loss in the prediction: y_hat - y."""
    return y_hat - y


def param_gradient(params: PredictorParams, X: np.ndarray, y: np.ndarray,
                   weights: np.ndarray) -> ParamGrads:
    """Exact gradient of sum_i w_i * loss(f(x_i), y_i) in the parameters."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if X.shape[1] != params.input_dim:
        raise ShapeError(
            f"expected input_dim {params.input_dim}, got {X.shape[1]}")
    if not (X.shape[0] == y.shape[0] == weights.shape[0]):
        raise ShapeError("X, y and weights must have matching first dimension")
    if np.any(weights < 0.0):
        raise ValueError("batch weights must be nonnegative")
    _, gw1, gb1, gw2, gb2 = kernels.value_and_grad(
        params.w1, params.b1, params.w2, params.b2,
        params.leaky_slope, params.delta,
        np.ascontiguousarray(X), y, weights)
    return ParamGrads(gw1, gb1, gw2, float(gb2))


def fd_gradient(params: PredictorParams, X: np.ndarray, y: np.ndarray,
                weights: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-finite-difference gradient of the weighted risk, flattened
    in (w1, b1, w2, b2) order. This is the audit oracle for
    ``param_gradient``: it only ever evaluates the forward pass."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    flat = ParamGrads(params.w1, params.b1, params.w2, params.b2).ravel()
    h = params.hidden_size
    d = params.input_dim

    def risk_at(v: np.ndarray) -> float:
        p = PredictorParams(v[:h * d].reshape(h, d), v[h * d:h * d + h],
                            v[h * d + h:h * d + 2 * h], v[-1],
                            params.leaky_slope, params.delta)
        r = forward_batch(p, X) - y
        return float(np.sum(weights * 0.5 * r * r))

    grad = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        dn = flat.copy()
        up[i] += step
        dn[i] -= step
        grad[i] = (risk_at(up) - risk_at(dn)) / (2.0 * step)
    return grad


def functional_distance(f: PredictorLike, g: PredictorLike,
                        X: np.ndarray, weights: np.ndarray) -> float:
    """Weighted L2 distance sqrt(sum_i w_i * (f(x_i) - g(x_i))^2).

    The weights are the atom masses of the distribution the norm is taken
    under; they must sum to 1.
    """
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("atom weights must sum to 1")
    d = predict(f, X) - predict(g, X)
    return float(np.sqrt(np.sum(weights * d * d)))
