"""Command-line front end: reproducible runs of every component.

Config-file-first (TOML or JSON), with ``--set section.key=value``
overrides and a handful of sugar flags for the common knobs. All
randomness flows from one root seed through named sub-streams, so any
artifact can be regenerated exactly from (config, seed).

Exit codes: 0 success, 1 numeric/verification failure, 2 config or data
error (argparse uses 2 for usage errors as well).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import counterexample as ce
from .distribution import certify_sensitivity
from .errors import ConfigError, DataError
from .harness import (apply_overrides, base_from_config, load_config,
                      run_experiment, specs_from_config)
from .predictor import (PredictorParams, fd_gradient, init_params,
                        param_gradient)
from .training import (final_delta_pr, rrm, stable_oracle, tabular_rrm,
                       tabular_rrm_step)


def derived_seed(root: int, name: str) -> int:
    """Stable named sub-seed of one root seed."""
    ss = np.random.SeedSequence(entropy=root,
                                spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class CliInvocation:
    subcommand: str
    config_path: Optional[str] = None
    overrides: list[str] = field(default_factory=list)
    out_dir: str = "out"
    seed: Optional[int] = None
    jobs: Optional[int] = None
    monte_carlo: bool = False
    cold_start: bool = False
    certify: bool = False
    delta: Optional[float] = None
    hidden_size: Optional[int] = None
    pairs: Optional[int] = None
    steps: Optional[int] = None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="performa",
        description="Simulate and verify retraining under the "
                    "resample-if-rejected distribution shift.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="TOML or JSON config document")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config entry, e.g. rrm.delta=0.7")
        p.add_argument("--out", help="output directory "
                       "(default $PERFORMA_OUT or ./out)")
        p.add_argument("--seed", type=int,
                       help="root seed; all sub-streams derive from it")

    p_run = sub.add_parser("run", help="one retraining trace")
    common(p_run)
    p_run.add_argument("--delta", type=float, help="output-cap parameter")
    p_run.add_argument("--hidden-size", type=int, help="hidden layer width")
    p_run.add_argument("--monte-carlo", action="store_true",
                       help="stochastic resampling instead of the exact density")
    p_run.add_argument("--cold-start", action="store_true",
                       help="re-initialize the predictor every retraining round")

    p_sweep = sub.add_parser("sweep", help="grid of retraining traces with "
                             "summary, charts and report")
    common(p_sweep)
    p_sweep.add_argument("--jobs", type=int,
                         help="concurrent cells (default: available cores)")
    p_sweep.add_argument("--certify", action="store_true",
                         help="add a sensitivity report per delta")
    p_sweep.add_argument("--monte-carlo", action="store_true",
                         help="stochastic resampling instead of the exact density")
    p_sweep.add_argument("--cold-start", action="store_true",
                         help="re-initialize the predictor every retraining round")

    p_cert = sub.add_parser("certify", help="check the sensitivity and "
                            "norm-ratio bounds on random predictor pairs")
    common(p_cert)
    p_cert.add_argument("--delta", type=float, help="output-cap parameter")
    p_cert.add_argument("--pairs", type=int, default=500,
                        help="number of predictor pairs (default 500)")

    p_ce = sub.add_parser("counterexample", help="closed-form oscillating "
                          "retraining orbit and its assumption checks")
    common(p_ce)
    p_ce.add_argument("--steps", type=int, default=100,
                      help="retraining steps to iterate (default 100)")

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit of "
                            "the analytic parameter gradient")
    common(p_grad)
    p_grad.add_argument("--pairs", type=int, default=100,
                        help="number of random (params, batch) cases")
    p_grad.add_argument("--delta", type=float, help="output-cap parameter")
    p_grad.add_argument("--hidden-size", type=int, help="hidden layer width")

    p_or = sub.add_parser("oracle", help="label-conditional-mean oracle: "
                          "fixed-point residual and distances along retraining")
    common(p_or)
    p_or.add_argument("--delta", type=float, help="output-cap parameter")
    p_or.add_argument("--steps", type=int, default=10,
                      help="retraining iterations to record (default 10)")

    return parser


def invocation_from_args(args: argparse.Namespace) -> CliInvocation:
    out = args.out or os.environ.get("PERFORMA_OUT") or "out"
    return CliInvocation(
        subcommand=args.subcommand,
        config_path=args.config,
        overrides=list(args.overrides),
        out_dir=out,
        seed=args.seed,
        jobs=getattr(args, "jobs", None),
        monte_carlo=getattr(args, "monte_carlo", False),
        cold_start=getattr(args, "cold_start", False),
        certify=getattr(args, "certify", False),
        delta=getattr(args, "delta", None),
        hidden_size=getattr(args, "hidden_size", None),
        pairs=getattr(args, "pairs", None),
        steps=getattr(args, "steps", None),
    )


def _load_doc(inv: CliInvocation) -> dict:
    doc = load_config(inv.config_path) if inv.config_path else {}
    doc = apply_overrides(doc, inv.overrides)
    if inv.delta is not None:
        doc.setdefault("rrm", {})["delta"] = inv.delta
    if inv.hidden_size is not None:
        doc.setdefault("rrm", {})["hidden_size"] = inv.hidden_size
    if inv.monte_carlo:
        doc.setdefault("rrm", {})["monte_carlo"] = True
    if inv.cold_start:
        doc.setdefault("rrm", {})["warm_start"] = False
    if inv.seed is not None:
        doc.setdefault("rrm", {})["rng_seed"] = inv.seed
        doc.setdefault("dataset", {})["rng_seed"] = derived_seed(inv.seed, "data")
        doc.setdefault("synthetic", {})["rng_seed"] = derived_seed(inv.seed, "data")
    return doc


def _setup(inv: CliInvocation):
    doc = _load_doc(inv)
    init_path = doc.pop("init_params", None)
    ds, syn, cfg, grid, run_id = specs_from_config(doc)
    base = base_from_config(ds, syn)
    out = Path(inv.out_dir) / run_id
    init = None
    if init_path:
        init = PredictorParams.from_json(Path(init_path).read_text())
    return base, cfg, grid, out, init


def cmd_run(inv: CliInvocation) -> int:
    base, cfg, _grid, out, init = _setup(inv)
    out.mkdir(parents=True, exist_ok=True)
    trace = rrm(base, cfg, init=init)
    stem = f"trace_{cfg.delta}_{cfg.hidden_size}_{cfg.rng_seed}"
    (out / f"{stem}.csv").write_text(trace.to_csv(), newline="")
    (out / f"{stem}.json").write_text(trace.to_json() + "\n", newline="")
    (out / f"params_{stem}.json").write_text(
        trace.final_params.to_json() + "\n", newline="")
    last = trace.records[-1]
    print(f"iterations: {len(trace.records)}  converged: {trace.converged}")
    print(f"final risk: {last.risk_post_shift!r}  "
          f"final functional step: {last.func_dist_to_prev!r}  "
          f"settled |dPR|: {final_delta_pr(base, trace):.3e}")
    print(f"artifacts in {out}")
    return 0


def cmd_sweep(inv: CliInvocation) -> int:
    base, cfg, grid, out, _init = _setup(inv)
    result = run_experiment(
        base, grid, cfg, out, jobs=inv.jobs, certify=inv.certify,
        certify_pairs=inv.pairs or 200)
    for c in result.cells:
        mark = "ok " if c.status == "ok" else "FAIL"
        print(f"[{mark}] delta={c.delta} h={c.hidden_size} seed={c.seed} "
              f"iters={c.n_iters} converged={c.converged}")
    print(f"report: {result.report_path}")
    return 1 if result.any_failed else 0


def cmd_certify(inv: CliInvocation) -> int:
    base, cfg, _grid, out, _init = _setup(inv)
    pairs = inv.pairs or 500
    seed = derived_seed(cfg.rng_seed, "pairs")
    report = certify_sensitivity(base, cfg.delta, pairs, mode=cfg.mode,
                                 rng_seed=seed)
    rows = [
        ("chi2 sensitivity", report.max_chi2_ratio, "<=", report.epsilon_bound,
         report.max_chi2_ratio <= report.epsilon_bound),
        ("norm ratio upper", report.max_norm_ratio, "<=",
         report.C_bound * (1 + 1e-9),
         report.max_norm_ratio <= report.C_bound * (1 + 1e-9)),
        ("norm ratio lower", report.min_norm_ratio, ">=",
         report.c_bound * (1 - 1e-9),
         report.min_norm_ratio >= report.c_bound * (1 - 1e-9)),
    ]
    print(f"delta={cfg.delta} mode={cfg.mode} pairs={pairs} "
          f"atoms={base.n_atoms}")
    for name, value, op, bound, ok in rows:
        print(f"  {name:18s} {value:.9f} {op} {bound:.9f}  "
              f"{'PASS' if ok else 'FAIL'}")
    print(f"overall: {'PASS' if report.all_pass else 'FAIL'}")
    out.mkdir(parents=True, exist_ok=True)
    (out / f"certify_{cfg.delta}.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
        newline="")
    return 0 if report.all_pass else 1


def cmd_counterexample(inv: CliInvocation) -> int:
    cfg = ce.CEConfig(n_steps=inv.steps or 100)
    run = ce.ce_run(cfg)
    print(f"{'step':>4}  {'theta':>12}  {'tanh(theta)':>12}  "
          f"{'func dist to prev':>18}")
    for row in run.to_rows():
        dist = "" if row["func_dist_to_prev"] is None \
            else f"{row['func_dist_to_prev']:.9f}"
        print(f"{row['step']:>4}  {row['theta']:>12.8f}  "
              f"{row['tanh_theta']:>12.8f}  {dist:>18}")
    # the orbit must alternate between tanh = -1/2 and +1/2
    expected = 0.5 * np.where(np.arange(run.tanhs.size) % 2 == 0, -1.0, 1.0)
    orbit_err = float(np.max(np.abs(run.tanhs - expected)))
    report = ce.ce_verify_assumptions(cfg)
    print()
    for check in report.checks:
        print(f"  {check.name:24s} {'PASS' if check.passed else 'FAIL'}  "
              f"({check.detail})")
    print(f"  period-2 orbit error     "
          f"{'PASS' if orbit_err < 1e-9 else 'FAIL'}  ({orbit_err:.3e})")
    print(f"  rate constant: {report.rate_constant:.6f} "
          f"{'< 1: oscillates anyway' if report.rate_constant < 1 else ''}")
    out = Path(inv.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["step,theta,tanh_theta,func_dist_to_prev"]
    for row in run.to_rows():
        dist = "" if row["func_dist_to_prev"] is None \
            else repr(row["func_dist_to_prev"])
        lines.append(f"{row['step']},{row['theta']!r},{row['tanh_theta']!r},{dist}")
    (out / "counterexample_orbit.csv").write_text("\n".join(lines) + "\n",
                                                  newline="")
    return 0 if (report.all_pass and orbit_err < 1e-9) else 1


def cmd_gradcheck(inv: CliInvocation) -> int:
    cases = inv.pairs or 100
    delta = inv.delta if inv.delta is not None else 0.9
    hidden = inv.hidden_size or 6
    seed = inv.seed if inv.seed is not None else 0
    worst = 0.0
    ok = True
    for k in range(cases):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=derived_seed(seed, "gradcheck"),
                                   spawn_key=(k,)))
        d = int(rng.integers(2, 12))
        n = int(rng.integers(1, 16))
        params = init_params(d, hidden, delta, rng)
        X = rng.normal(size=(n, d))
        y = rng.choice([0.0, 1.0 - delta], size=n)
        w = rng.random(n)
        w = w / w.sum()
        analytic = param_gradient(params, X, y, w).ravel()
        numeric = fd_gradient(params, X, y, w)
        # relative error 1e-5 with an absolute floor of 1e-8 per coordinate
        err = np.abs(analytic - numeric)
        rel = float(np.max(err / np.maximum(np.abs(numeric), 1e-8)))
        worst = max(worst, rel)
        ok &= bool(np.all(err <= np.maximum(1e-5 * np.abs(numeric), 1e-8)))
    print(f"gradcheck: {cases} cases, worst coordinate-wise relative error "
          f"{worst:.3e} (tolerance 1e-5): {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_oracle(inv: CliInvocation) -> int:
    base, cfg, _grid, out, _init = _setup(inv)
    oracle = stable_oracle(base, cfg.delta)
    stepped = tabular_rrm_step(oracle, base, cfg.delta)
    residual = float(np.max(np.abs(stepped.values - oracle.values)))
    print(f"oracle fixed-point residual after one tabular retraining step: "
          f"{residual:.3e}")
    _tab, dists = tabular_rrm(base, cfg.delta, 5,
                              derived_seed(cfg.rng_seed, "init"))
    print(f"tabular-class retraining distance to oracle per iteration: "
          f"{[f'{d:.3e}' for d in dists]}")
    cfg = replace(cfg, max_rrm_iters=inv.steps or 10)
    trace = rrm(base, cfg)
    print("network retraining, distance to oracle per iteration:")
    for r in trace.records:
        print(f"  iter {r.iter:3d}  oracle_dist {r.dist_to_oracle!r}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle_distances.json").write_text(json.dumps({
        "fixed_point_residual": residual,
        "tabular_dists": dists,
        "network_dists": [r.dist_to_oracle for r in trace.records],
    }, sort_keys=True, indent=2) + "\n", newline="")
    return 0 if residual < 1e-12 else 1


_COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "certify": cmd_certify,
    "counterexample": cmd_counterexample,
    "gradcheck": cmd_gradcheck,
    "oracle": cmd_oracle,
}


def dispatch(inv: CliInvocation) -> int:
    if inv.subcommand not in _COMMANDS:
        raise ConfigError(f"unknown subcommand {inv.subcommand!r}")
    return _COMMANDS[inv.subcommand](inv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    inv = invocation_from_args(args)
    try:
        return dispatch(inv)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
