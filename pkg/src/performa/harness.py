"""Data ingestion, experiment orchestration, and artifact emission.

Loads the credit-style CSV schema (or generates a synthetic stand-in
whose strategic coordinates are independent of everything else by
construction), runs grids of retraining experiments concurrently, and
writes trace CSVs, a summary table, self-contained SVG charts and a
report JSON. All outputs are byte-deterministic for a fixed config and
seed: no timestamps, sorted keys, repr-round-trip floats.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .distribution import EmpiricalBase, certify_sensitivity
from .errors import ConfigError, DataError
from .training import RRMConfig, RRMTrace, final_delta_pr, rrm

#: Default strategic columns for the credit schema: the utilization and
#: open-lines style counters that an applicant can game cheaply.
DEFAULT_CREDIT_STRATEGIC = (
    "RevolvingUtilizationOfUnsecuredLines",
    "NumberOfOpenCreditLinesAndLoans",
    "NumberRealEstateLoansOrLines",
)

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass
class DatasetSpec:
    """Where the base distribution comes from and how rows are prepared."""

    source: str = "synthetic"                 # csv path or "synthetic"
    label_column: str = "SeriousDlqin2yrs"
    strategic_columns: Sequence[str] = DEFAULT_CREDIT_STRATEGIC
    standardize: bool = True
    impute: str = "median"                    # "median" or "drop"
    subsample: int = 0                        # 0 -> all rows
    rng_seed: int = 0

    def __post_init__(self):
        if self.impute not in ("median", "drop"):
            raise ConfigError(f"impute must be 'median' or 'drop', got {self.impute!r}")


@dataclass
class SyntheticSpec:
    """Generator for a credit-like base whose strategic coordinates are
    drawn independently of the label and the non-strategic coordinates."""

    n_rows: int = 500
    n_strategic: int = 3
    n_nonstrategic: int = 5
    class_balance: float = 0.3
    separation: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_strategic < 1 or self.n_nonstrategic < 1:
            raise ConfigError("synthetic counts must be >= 1")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("class_balance must be in (0, 1)")


@dataclass
class PreparedData:
    """Loader output: the base plus everything needed to invert preprocessing."""

    base: EmpiricalBase
    feature_columns: list[str]
    strategic_columns: list[str]
    means: Optional[np.ndarray]
    stds: Optional[np.ndarray]
    raw_features: np.ndarray      # post-impute, pre-standardize rows


def _parse_numeric_frame(df: pd.DataFrame, path: str) -> pd.DataFrame:
    out = {}
    for col in df.columns:
        raw = df[col].astype(str).str.strip()
        missing = raw.str.lower().isin(_MISSING_TOKENS)
        coerced = pd.to_numeric(raw.where(~missing), errors="coerce")
        bad = coerced.isna() & ~missing
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            raise DataError(
                f"{path}: unparseable cell at row {row}, column {col!r}: "
                f"{raw.iloc[row]!r}")
        out[col] = coerced
    return pd.DataFrame(out)


def prepare_dataset(spec: DatasetSpec) -> PreparedData:
    """Load and preprocess a CSV into an equal-weight atom set."""
    path = spec.source
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if spec.label_column not in df.columns:
        raise ConfigError(f"label column {spec.label_column!r} not in {path}")
    feature_columns = [c for c in df.columns if c != spec.label_column]
    strategic = list(spec.strategic_columns)
    missing_cols = [c for c in strategic if c not in feature_columns]
    if missing_cols:
        raise ConfigError(f"strategic columns not in dataset: {missing_cols}")

    num = _parse_numeric_frame(df, path)
    labels = num[spec.label_column]
    if labels.isna().any():
        raise DataError(f"{path}: missing values in label column")
    feats = num[feature_columns]

    if spec.impute == "drop":
        keep = ~feats.isna().any(axis=1)
        feats = feats[keep]
        labels = labels[keep]
    else:
        medians = feats.median(axis=0, skipna=True)
        if medians.isna().any():
            raise DataError(f"{path}: a feature column is entirely missing")
        feats = feats.fillna(medians)

    X = feats.to_numpy(dtype=np.float64)
    y = labels.to_numpy(dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError(f"{path}: no rows left after preprocessing")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError(f"{path}: labels must be binary 0/1")

    if spec.subsample:
        if spec.subsample > X.shape[0]:
            raise ConfigError(
                f"subsample {spec.subsample} exceeds row count {X.shape[0]}")
        rng = np.random.default_rng(spec.rng_seed)
        idx = np.sort(rng.choice(X.shape[0], size=spec.subsample, replace=False))
        X, y = X[idx], y[idx]

    raw = X.copy()
    means = stds = None
    if spec.standardize:
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        stds = np.where(stds == 0.0, 1.0, stds)   # constant column: leave centered
        X = (X - means) / stds

    strategic_idx = [feature_columns.index(c) for c in strategic]
    base = EmpiricalBase.from_arrays(X, y, strategic_idx=strategic_idx)
    return PreparedData(base, feature_columns, strategic, means, stds, raw)


def load_dataset(spec: DatasetSpec) -> EmpiricalBase:
    return prepare_dataset(spec).base


def gen_synthetic(spec: SyntheticSpec) -> EmpiricalBase:
    """Synthetic base: strategic coordinates are standard normal and
    independent of (label, non-strategic coordinates); non-strategic
    coordinates are class-conditionally shifted by ``separation``."""
    rng = np.random.default_rng(spec.rng_seed)
    y = (rng.random(spec.n_rows) < spec.class_balance).astype(np.float64)
    strat = rng.normal(size=(spec.n_rows, spec.n_strategic))
    nonstrat = rng.normal(size=(spec.n_rows, spec.n_nonstrategic))
    nonstrat += spec.separation * y[:, None]
    X = np.concatenate([strat, nonstrat], axis=1)
    return EmpiricalBase.from_arrays(
        X, y, strategic_idx=range(spec.n_strategic))


# ---------------------------------------------------------------------------
# sweep orchestration


@dataclass
class SweepGrid:
    deltas: Sequence[float] = (0.1, 0.4, 0.7, 0.9)
    hidden_sizes: Sequence[int] = (6,)
    seeds: Sequence[int] = (0,)

    def cells(self) -> list[tuple[float, int, int]]:
        return [(d, h, s) for d in self.deltas
                for h in self.hidden_sizes for s in self.seeds]

    def to_dict(self) -> dict:
        return {"deltas": list(self.deltas),
                "hidden_sizes": list(self.hidden_sizes),
                "seeds": list(self.seeds)}


@dataclass
class CellResult:
    delta: float
    hidden_size: int
    seed: int
    status: str                      # "ok" or "failed"
    error: Optional[str]
    trace_file: Optional[str]
    n_iters: int = 0
    converged: bool = False
    final_risk: Optional[float] = None
    final_delta_pr: Optional[float] = None
    final_func_dist: Optional[float] = None
    final_accuracy: Optional[float] = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "delta", "hidden_size", "seed", "status", "error", "trace_file",
            "n_iters", "converged", "final_risk", "final_delta_pr",
            "final_func_dist", "final_accuracy")}


@dataclass
class ExperimentResult:
    out_dir: Path
    cells: list[CellResult]
    report_path: Path

    @property
    def any_failed(self) -> bool:
        return any(c.status != "ok" for c in self.cells)


def _cell_trace(base: EmpiricalBase, template: RRMConfig,
                delta: float, hidden_size: int, seed: int) -> RRMTrace:
    cfg = replace(template, delta=delta, hidden_size=hidden_size, rng_seed=seed)
    return rrm(base, cfg)


def run_experiment(base: EmpiricalBase, grid: SweepGrid, template: RRMConfig,
                   out_dir: Union[str, Path], jobs: Optional[int] = None,
                   certify: bool = False, certify_pairs: int = 200,
                   extra_report: Optional[dict] = None) -> ExperimentResult:
    """Run one retraining trace per grid cell and write all artifacts.

    Cells run concurrently (``jobs`` workers); every output is written
    after the join point in sorted cell order, so artifacts do not depend
    on scheduling. A failing cell is recorded in the summary and report
    while the remaining cells continue.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cell_keys = grid.cells()
    if not cell_keys:
        raise ConfigError("sweep grid is empty")
    jobs = jobs or min(len(cell_keys), os.cpu_count() or 1)

    traces: dict[tuple, Union[RRMTrace, Exception]] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(_cell_trace, base, template, d, h, s): (d, h, s)
                   for (d, h, s) in cell_keys}
        for fut in concurrent.futures.as_completed(futures):
            key = futures[fut]
            try:
                traces[key] = fut.result()
            except Exception as exc:          # per-cell isolation
                traces[key] = exc

    cells: list[CellResult] = []
    for (d, h, s) in sorted(cell_keys):
        got = traces[(d, h, s)]
        name = f"trace_{d}_{h}_{s}.csv"
        if isinstance(got, Exception):
            cells.append(CellResult(d, h, s, "failed",
                                    f"{type(got).__name__}: {got}", None))
            continue
        (out / name).write_text(got.to_csv(), newline="")
        last = got.records[-1]
        dpr = final_delta_pr(base, got)
        cells.append(CellResult(
            d, h, s, "ok", None, name,
            n_iters=len(got.records), converged=got.converged,
            final_risk=last.risk_post_shift, final_delta_pr=dpr,
            final_func_dist=last.func_dist_to_prev,
            final_accuracy=last.accuracy_post))

    _write_summary(out / "summary.csv", cells)
    for d in sorted(set(k[0] for k in cell_keys)):
        series = {}
        for (dd, h, s) in sorted(cell_keys):
            if dd == d and not isinstance(traces[(dd, h, s)], Exception):
                tr = traces[(dd, h, s)]
                series[f"h={h} seed={s}"] = (
                    [r.iter for r in tr.records],
                    [r.risk_post_shift for r in tr.records])
        if series:
            svg_log_risk_chart(series, f"log10 performative risk, delta={d}",
                               out / f"fig_risk_{d}.svg")

    report = {
        "grid": grid.to_dict(),
        "config": template.to_dict(),
        "cells": [c.to_dict() for c in cells],
    }
    if extra_report:
        report.update(extra_report)
    if certify:
        report["sensitivity"] = {}
        for d in sorted(set(k[0] for k in cell_keys)):
            rep = certify_sensitivity(base, d, certify_pairs,
                                      mode=template.mode,
                                      rng_seed=template.rng_seed)
            report["sensitivity"][str(d)] = rep.to_dict()
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                           newline="")
    return ExperimentResult(out, cells, report_path)


def _write_summary(path: Path, cells: list[CellResult]):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ("delta", "hidden_size", "seed", "status", "n_iters", "converged",
            "final_risk", "final_delta_pr", "final_func_dist", "final_accuracy")
    writer.writerow(cols)
    for c in cells:
        row = []
        for name in cols:
            v = getattr(c, name)
            row.append("" if v is None else (repr(v) if isinstance(v, float) else v))
        writer.writerow(row)
    path.write_text(buf.getvalue(), newline="")


# ---------------------------------------------------------------------------
# SVG charts (self-contained; CSV stays the source of truth)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf")


def svg_log_risk_chart(series: dict[str, tuple[list, list]], title: str,
                       path: Union[str, Path],
                       width: int = 820, height: int = 460):
    """Line chart of log10(risk) against iteration.

    The exact risk values (repr strings, identical to the trace CSV) are
    embedded in a <metadata> block so the plotted data can be audited
    without recomputation.
    """
    ml, mr, mt, mb = 70, 20, 40, 45
    plot_w, plot_h = width - ml - mr, height - mt - mb

    logs = {}
    for label, (xs, ys) in series.items():
        logs[label] = (list(xs),
                       [float(np.log10(max(v, 1e-300))) for v in ys])
    all_x = [x for xs, _ in logs.values() for x in xs]
    all_y = [y for _, ys in logs.values() for y in ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return mt + (y_hi - y) / (y_hi - y_lo) * plot_h

    meta = {label: {"iter": xs, "risk_post_shift": [repr(v) for v in ys]}
            for label, (xs, ys) in series.items()}

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<metadata>{json.dumps({"series": meta}, sort_keys=True)}</metadata>',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{ml}" y1="{mt + plot_h}" x2="{ml + plot_w}" '
        f'y2="{mt + plot_h}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + plot_h}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        xv = x_lo + frac * (x_hi - x_lo)
        parts.append(
            f'<text x="{ml - 6}" y="{sy(yv):.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{yv:.3f}</text>')
        parts.append(
            f'<text x="{sx(xv):.2f}" y="{mt + plot_h + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{xv:.0f}</text>')
    for i, (label, (xs, ys)) in enumerate(sorted(logs.items())):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" '
                     f'stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{ml + plot_w - 6}" y="{mt + 16 + 14 * i}" '
            f'text-anchor="end" font-family="sans-serif" font-size="11" '
            f'fill="{color}">{label}</text>')
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">retraining iteration</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", newline="")


# ---------------------------------------------------------------------------
# config documents (TOML on 3.11+/tomli, JSON always)


def load_config(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config {path}: {exc}") from exc
    try:
        import tomllib
    except ImportError:
        try:
            import tomli as tomllib
        except ImportError as exc:
            raise ConfigError(
                "TOML configs need Python 3.11+ or the tomli package; "
                "use a .json config otherwise") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML config {path}: {exc}") from exc


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as JSON with a
    bare-string fallback."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-table")
        node[parts[-1]] = value
    return doc


def specs_from_config(doc: dict) -> tuple[DatasetSpec, Optional[SyntheticSpec],
                                          RRMConfig, SweepGrid, str]:
    """Split one config document into the component specs."""
    known = {"run_id", "dataset", "synthetic", "rrm", "grid"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        ds = DatasetSpec(**doc.get("dataset", {}))
        syn = SyntheticSpec(**doc.get("synthetic", {}))
        rrm_doc = dict(doc.get("rrm", {}))
        rrm_doc.setdefault("delta", 0.9)
        cfg = RRMConfig(**rrm_doc)
        grid = SweepGrid(**doc.get("grid", {}))
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from exc
    return ds, syn, cfg, grid, str(doc.get("run_id", "run"))


def base_from_config(ds: DatasetSpec, syn: SyntheticSpec) -> EmpiricalBase:
    if ds.source == "synthetic":
        return gen_synthetic(syn)
    return load_dataset(ds)
