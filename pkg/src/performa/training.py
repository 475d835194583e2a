"""Risk evaluation, approximate risk minimization, and the repeated
retraining loop with contraction diagnostics.

One retraining round: deploy the current predictor, let the distribution
shift (closed-form density, or stochastic resampling in monte-carlo
mode), then retrain to tolerance on the shifted distribution. The loop
records risks and accuracies before/after each retrain, functional
distances between successive predictors, the resulting contraction
ratios against the (1-delta)/delta rate bound, and the distance to the
label-conditional-mean oracle.
"""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernels
from .distribution import EmpiricalBase, InducedDistribution, rir_density, rir_sample
from .errors import DivergenceError, SupportError
from .predictor import (PredictorLike, PredictorParams, functional_distance,
                        init_params, predict)


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Named RNG sub-stream derived from one root seed (stable across runs)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=root_seed,
                               spawn_key=(zlib.crc32(name.encode("utf-8")),)))


@dataclass
class RRMConfig:
    """Configuration of one repeated-retraining run."""

    delta: float
    hidden_size: int = 6
    max_rrm_iters: int = 30
    inner_tol: float = 1e-9          # |risk_k - risk_{k-1}| stopping rule
    inner_max_steps: int = 20000
    learning_rate: float = 0.1
    warm_start: bool = True
    rng_seed: int = 0
    mode: str = "full"
    backtracking: bool = True
    monte_carlo: bool = False
    mc_draws: int = 0                # 0 -> one draw per base atom
    outer_tol: float = 1e-7          # functional-distance stopping rule

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.inner_tol <= 0.0 or self.learning_rate <= 0.0:
            raise ValueError("inner_tol and learning_rate must be positive")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.mode not in ("full", "strategic"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "delta", "hidden_size", "max_rrm_iters", "inner_tol",
            "inner_max_steps", "learning_rate", "warm_start", "rng_seed",
            "mode", "backtracking", "monte_carlo", "mc_draws", "outer_tol")}


@dataclass
class IterationRecord:
    iter: int
    risk_pre_shift: float
    risk_post_shift: float
    risk_post_retrain: float
    accuracy_pre: float
    accuracy_post: float
    func_dist_to_prev: float
    contraction_ratio: Optional[float]
    dist_to_oracle: Optional[float]


TRACE_CSV_COLUMNS = ("iter", "risk_post_shift", "risk_post_retrain",
                     "accuracy_pre", "accuracy_post", "func_dist",
                     "contraction_ratio", "oracle_dist")


@dataclass
class RRMTrace:
    """Per-iteration log of a repeated-retraining run."""

    records: list[IterationRecord]
    rate_bound: float                  # (1 - delta) / delta
    delta: float
    mode: str
    converged: bool
    final_params: Optional[PredictorParams] = None
    config: Optional[RRMConfig] = None

    def contraction_ratios(self) -> list[Optional[float]]:
        return [r.contraction_ratio for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_CSV_COLUMNS)
        for r in self.records:
            writer.writerow([
                r.iter,
                repr(r.risk_post_shift),
                repr(r.risk_post_retrain),
                repr(r.accuracy_pre),
                repr(r.accuracy_post),
                repr(r.func_dist_to_prev),
                "" if r.contraction_ratio is None else repr(r.contraction_ratio),
                "" if r.dist_to_oracle is None else repr(r.dist_to_oracle),
            ])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rate_bound": self.rate_bound,
            "delta": self.delta,
            "mode": self.mode,
            "converged": self.converged,
            "config": None if self.config is None else self.config.to_dict(),
            "records": [vars(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def performative_risk(f: PredictorLike, d) -> float:
    """Expected squared-error loss of f under a weighted atom set
    (InducedDistribution or EmpiricalBase); exact and variance-free."""
    resid = predict(f, d.X) - d.y
    return float(np.sum(d.weights * 0.5 * resid * resid))


def _accuracy(f: PredictorLike, X, y, weights, delta: float) -> float:
    thr = (1.0 - delta) / 2.0
    agree = (predict(f, X) >= thr) == (y >= thr)
    return float(np.sum(weights * agree))


def accuracy(f: PredictorLike, d: InducedDistribution) -> float:
    """Weighted fraction of atoms where thresholding f at (1-delta)/2
    matches the label."""
    return _accuracy(f, d.X, d.y, d.weights, d.delta)


def minimize_risk(d, init: PredictorParams, cfg: RRMConfig) -> PredictorParams:
    """Full-batch gradient descent on a fixed weighted atom set, stopping
    when the risk difference of consecutive steps drops below
    cfg.inner_tol (or at cfg.inner_max_steps)."""
    X = np.ascontiguousarray(d.X, dtype=np.float64)
    y = np.asarray(d.y, dtype=np.float64)
    w = np.asarray(d.weights, dtype=np.float64)
    w1, b1, w2, b2, risk, _steps, status = kernels.gd_minimize(
        init.w1, init.b1, init.w2, init.b2, init.leaky_slope, init.delta,
        X, y, w, cfg.learning_rate, cfg.inner_tol, cfg.inner_max_steps,
        cfg.backtracking)
    if status != 0:
        raise DivergenceError(
            "non-finite risk during gradient descent; lower the learning rate")
    return PredictorParams(w1, b1, w2, b2, init.leaky_slope, init.delta)


@dataclass
class TabularPredictor:
    """Lookup predictor over a finite feature support (the convex class
    used for fixed-point checks; also the label-conditional-mean oracle)."""

    X_unique: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self._lookup = {self.X_unique[i].tobytes(): i
                        for i in range(self.X_unique.shape[0])}

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            j = self._lookup.get(X[i].tobytes())
            if j is None:
                raise SupportError("feature vector outside the tabular support")
            out[i] = self.values[j]
        return out

    def with_values(self, values: np.ndarray) -> "TabularPredictor":
        return TabularPredictor(self.X_unique, np.asarray(values, dtype=np.float64))


def _require_binary_labels(base: EmpiricalBase):
    if not np.all((base.y == 0.0) | (base.y == 1.0)):
        raise ValueError("expected binary 0/1 labels; rescaling to "
                         "{0, 1-delta} happens internally per run")


def stable_oracle(base: EmpiricalBase, delta: float) -> TabularPredictor:
    """Label-conditional mean predictor x -> E[Y | X=x] on the (rescaled)
    base; the retraining fixed point over all measurable functions, since
    the shift never touches the label conditional."""
    _require_binary_labels(base)
    X_unique, gid = base.x_groups()
    k = X_unique.shape[0]
    mass = np.zeros(k)
    label_mass = np.zeros(k)
    np.add.at(mass, gid, base.weights)
    np.add.at(label_mass, gid, base.weights * base.y)
    values = (1.0 - delta) * label_mass / mass
    return TabularPredictor(X_unique, values)


def tabular_rrm_step(tab: TabularPredictor, base: EmpiricalBase,
                     delta: float) -> TabularPredictor:
    """One exact retraining round within the tabular class: shift the
    (rescaled) base by the current tabular predictor, then minimize risk
    exactly per feature group (the group mean under the shifted weights)."""
    _require_binary_labels(base)
    scaled = base.with_scaled_labels(1.0 - delta)
    ind = rir_density(scaled, tab, delta, mode="full")
    X_unique, gid = base.x_groups()
    if not np.array_equal(X_unique, tab.X_unique):
        raise SupportError("tabular predictor support does not match the base")
    k = tab.X_unique.shape[0]
    mass = np.zeros(k)
    label_mass = np.zeros(k)
    np.add.at(mass, gid, ind.weights)
    np.add.at(label_mass, gid, ind.weights * scaled.y)
    return tab.with_values(label_mass / mass)


def tabular_rrm(base: EmpiricalBase, delta: float, n_iters: int,
                rng: Union[int, np.random.Generator]) -> tuple[TabularPredictor, list[float]]:
    """Repeated retraining within the tabular class from a random start;
    returns the final predictor and the per-iteration distances to the
    label-conditional-mean oracle (under base weights)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    oracle = stable_oracle(base, delta)
    tab = oracle.with_values(
        rng.uniform(0.0, 1.0 - delta, size=oracle.values.shape[0]))
    dists = []
    for _ in range(n_iters):
        tab = tabular_rrm_step(tab, base, delta)
        dists.append(functional_distance(tab, oracle, base.X, base.weights))
    return tab, dists


def oracle_distance(f: PredictorLike, oracle: TabularPredictor,
                    base: EmpiricalBase) -> float:
    """Functional distance between f and the oracle under base weights."""
    return functional_distance(f, oracle, base.X, base.weights)


def final_performative_risk(base: EmpiricalBase, trace: RRMTrace) -> float:
    """Exact performative risk of the trace's final predictor on the
    distribution it induces (one closed-form evaluation past the loop)."""
    scaled = base.with_scaled_labels(1.0 - trace.delta)
    d = rir_density(scaled, trace.final_params, trace.delta, trace.mode)
    return performative_risk(trace.final_params, d)


def final_delta_pr(base: EmpiricalBase, trace: RRMTrace) -> float:
    """PR movement produced by the final retraining round: |PR(f_final) -
    PR(f_prev)|. This is the settled convergence gauge even when the loop
    stops after very few rounds."""
    return abs(final_performative_risk(base, trace)
               - trace.records[-1].risk_post_shift)


def rrm(base: EmpiricalBase, cfg: RRMConfig,
        init: Optional[PredictorParams] = None) -> RRMTrace:
    """Run repeated risk minimization and record the full diagnostic trace.

    The base must carry binary 0/1 labels; they are rescaled to
    {0, 1-delta} so squared-error targets match the predictor range. The
    shift uses the exact closed-form density unless cfg.monte_carlo, in
    which case each round trains on a fresh resampled dataset (this is
    the stochastic variant; traces then differ run to run only through
    the seeded sampler stream).
    """
    _require_binary_labels(base)
    scaled = base.with_scaled_labels(1.0 - cfg.delta)
    init_rng = substream(cfg.rng_seed, "init")
    mc_rng = substream(cfg.rng_seed, "sampler")
    oracle = stable_oracle(base, cfg.delta)

    params = init if init is not None else init_params(
        base.input_dim, cfg.hidden_size, cfg.delta, init_rng)

    records: list[IterationRecord] = []
    prev_d = scaled
    prev_dist: Optional[float] = None
    converged = False
    for t in range(cfg.max_rrm_iters):
        if cfg.monte_carlo:
            n_draws = cfg.mc_draws if cfg.mc_draws > 0 else base.n_atoms
            draws = rir_sample(scaled, params, cfg.delta, cfg.mode,
                               n_draws, mc_rng)
            d_t = EmpiricalBase.from_arrays(draws.X, draws.y)
        else:
            d_t = rir_density(scaled, params, cfg.delta, cfg.mode)

        risk_pre_shift = performative_risk(params, prev_d)
        risk_post_shift = performative_risk(params, d_t)
        acc_pre = _accuracy(params, d_t.X, d_t.y, d_t.weights, cfg.delta)

        new_params = minimize_risk(
            d_t,
            params if cfg.warm_start else init_params(
                base.input_dim, cfg.hidden_size, cfg.delta, init_rng),
            cfg)

        risk_post_retrain = performative_risk(new_params, d_t)
        acc_post = _accuracy(new_params, d_t.X, d_t.y, d_t.weights, cfg.delta)
        func_dist = functional_distance(new_params, params,
                                        scaled.X, scaled.weights)
        ratio = None
        if prev_dist is not None and prev_dist >= 1e-10:
            ratio = func_dist / prev_dist
        records.append(IterationRecord(
            iter=t,
            risk_pre_shift=risk_pre_shift,
            risk_post_shift=risk_post_shift,
            risk_post_retrain=risk_post_retrain,
            accuracy_pre=acc_pre,
            accuracy_post=acc_post,
            func_dist_to_prev=func_dist,
            contraction_ratio=ratio,
            dist_to_oracle=oracle_distance(new_params, oracle, scaled),
        ))
        params = new_params
        prev_d = d_t
        prev_dist = func_dist
        if func_dist < cfg.outer_tol:
            converged = True
            break

    return RRMTrace(
        records=records,
        rate_bound=(1.0 - cfg.delta) / cfg.delta,
        delta=cfg.delta,
        mode=cfg.mode,
        converged=converged,
        final_params=params,
        config=cfg,
    )
