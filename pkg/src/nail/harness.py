"""Repeated masked-split experiments over a hyperparameter grid.

Each repeat draws one row split and one set of masks, shared by every
variant and grid cell, so comparisons across cells are paired. Training
rows get the r/s masks; validation rows keep their features but have all
labels hidden, and are fitted jointly with the training rows. Test scores
come from the hidden training labels, model selection from the validation
labels.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import (MaskSpec, SyntheticSpec, apply_feature_mask, apply_label_mask, concat_rows,
                   hide_labels, load_dataset, split_rows, subsample_rows, synthesize)
from .metrics import average_precision, hamming_score
from .solver import VARIANTS, SolverConfig, SolverDivergence, fit, predict

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(10.0 ** i for i in range(-3, 4))

RESULT_FIELDS = ("variant", "lam", "mu", "r_k", "repeat", "seed", "status", "hs", "ap",
                 "val_hs", "val_ap", "iterations", "converged", "objective")
METRICS = ("hs", "ap", "val_hs", "val_ap", "iterations")


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: str | None = None
    synthetic: SyntheticSpec | None = None
    mask_r: float = 0.5
    mask_s: float = 0.5
    variants: tuple = ("NAIL",)
    lambdas: tuple = DEFAULT_GRID
    mus: tuple = DEFAULT_GRID
    r_ks: tuple = (0.2, 0.5, 0.8)
    repeats: int = 10
    train_fraction: float = 0.7
    seed: int = 0
    max_outer: int = 500
    tol: float = 1e-5
    nonneg_label_weights: bool = False
    subsample: int | None = None
    workers: int = 1

    def __post_init__(self):
        for name in ("variants", "lambdas", "mus", "r_ks"):
            value = getattr(self, name)
            value = (value,) if isinstance(value, (str, int, float)) else tuple(value)
            if not value:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "lambdas", tuple(float(x) for x in self.lambdas))
        object.__setattr__(self, "mus", tuple(float(x) for x in self.mus))
        object.__setattr__(self, "r_ks", tuple(float(x) for x in self.r_ks))
        if isinstance(self.synthetic, dict):
            object.__setattr__(self, "synthetic", SyntheticSpec(**self.synthetic))
        if (self.manifest is None) == (self.synthetic is None):
            raise ValueError("give exactly one of a dataset manifest or a synthetic spec")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if self.repeats < 1 or self.workers < 1:
            raise ValueError("repeats and workers must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        MaskSpec(self.mask_r, self.mask_s)  # range check

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synthetic"] = None if self.synthetic is None else self.synthetic.to_dict()
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def cells(self):
        return list(itertools.product(self.variants, self.lambdas, self.mus, self.r_ks))

    def solver_config(self, variant, lam, mu, r_k, seed) -> SolverConfig:
        return SolverConfig(lam=lam, mu=mu, r_k=r_k, variant=variant, seed=seed,
                            label_weights_signed=not self.nonneg_label_weights,
                            max_outer=self.max_outer, tol=self.tol)


def repeat_seeds(base: int, repeat: int) -> tuple[int, int, int]:
    """(split, mask, init) seeds for one repeat; independent of variant and grid cell."""
    s = np.random.SeedSequence([base, repeat]).generate_state(3)
    return int(s[0]), int(s[1]), int(s[2])


def base_dataset(cfg: ExperimentConfig):
    ds = load_dataset(cfg.manifest) if cfg.manifest else synthesize(cfg.synthetic)[0]
    if cfg.subsample:
        ds = subsample_rows(ds, cfg.subsample, cfg.seed)
    return ds


def repeat_dataset(cfg: ExperimentConfig, repeat: int, ds=None):
    """Joint (train + validation) dataset for one repeat and the number of training rows."""
    ds = base_dataset(cfg) if ds is None else ds
    split_seed, mask_seed, _ = repeat_seeds(cfg.seed, repeat)
    train, val = split_rows(ds, cfg.train_fraction, split_seed)
    mask = MaskSpec(cfg.mask_r, cfg.mask_s, mask_seed)
    train = apply_label_mask(apply_feature_mask(train, mask), mask)
    return concat_rows(train, hide_labels(val)), train.n


@lru_cache(maxsize=4)
def _cached_repeat(cfg: ExperimentConfig, repeat: int):
    return repeat_dataset(cfg, repeat)


def _scores(scores, pred, ds, rows):
    truth, mask = ds.label_truth[rows], ds.eval_mask[rows]
    hs = hamming_score(pred[rows], truth, mask) if mask.any() else math.nan
    try:
        ap = average_precision(scores[rows], truth, mask)
    except ValueError:
        ap = math.nan
    return hs, ap


def run_job(cfg: ExperimentConfig, variant, lam, mu, r_k, repeat):
    """Fit one (cell, repeat); returns (result row, objective curve, runtime in seconds)."""
    ds, n_train = _cached_repeat(cfg, repeat)
    seed = repeat_seeds(cfg.seed, repeat)[2]
    row = dict(variant=variant, lam=lam, mu=mu, r_k=r_k, repeat=repeat, seed=seed)
    t0 = time.perf_counter()
    try:
        state, trace = fit(ds, cfg.solver_config(variant, lam, mu, r_k, seed), record_substeps=False)
    except SolverDivergence as exc:
        row.update(status="diverged", hs=math.nan, ap=math.nan, val_hs=math.nan, val_ap=math.nan,
                   iterations=exc.trace.iterations if exc.trace else 0, converged=False,
                   objective=math.nan)
        return row, [], time.perf_counter() - t0
    scores, pred = predict(state)
    train_rows = np.arange(ds.n) < n_train
    hs, ap = _scores(scores, pred, ds, train_rows)
    val_hs, val_ap = _scores(scores, pred, ds, ~train_rows)
    row.update(status="ok", hs=hs, ap=ap, val_hs=val_hs, val_ap=val_ap,
               iterations=trace.iterations, converged=trace.converged,
               objective=trace.objectives[-1].total)
    curve = [(o.reconstruction, o.label, o.hsic) for o in trace.objectives]
    return row, curve, time.perf_counter() - t0


def _run_packed(args):
    return run_job(*args)


@dataclass
class EvalReport:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    runtimes: list = field(default_factory=list)

    def summary(self) -> list[dict]:
        """Mean and population standard deviation of each metric per (variant, cell)."""
        groups = {}
        for row in self.rows:
            groups.setdefault((row["variant"], row["lam"], row["mu"], row["r_k"]), []).append(row)
        out = []
        for (variant, lam, mu, r_k), rows in groups.items():
            entry = dict(variant=variant, lam=lam, mu=mu, r_k=r_k, runs=len(rows),
                         failed=sum(r["status"] != "ok" for r in rows))
            for key in METRICS:
                vals = np.array([r[key] for r in rows], dtype=float)
                vals = vals[np.isfinite(vals)]
                entry[f"{key}_mean"] = float(vals.mean()) if vals.size else math.nan
                entry[f"{key}_std"] = float(vals.std()) if vals.size else math.nan
            out.append(entry)
        return out

    def best_cells(self) -> dict:
        """Per variant, the grid cell with the highest mean validation AP."""
        best = {}
        for entry in self.summary():
            score = entry["val_ap_mean"]
            score = -math.inf if math.isnan(score) else score
            cur = best.get(entry["variant"])
            if cur is None or score > cur[0]:
                best[entry["variant"]] = (score, entry)
        return {v: e for v, (_, e) in best.items()}


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    jobs = [(cfg, *cell, rep) for rep in range(cfg.repeats) for cell in cfg.cells()]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_packed, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        results = [_run_packed(job) for job in jobs]
    report = EvalReport(cfg)
    for row, curve, runtime in results:
        report.rows.append(row)
        report.curves.append(curve)
        report.runtimes.append(runtime)
        if row["status"] != "ok":
            log.warning("%s lam=%g mu=%g r_k=%g repeat %d: %s", row["variant"], row["lam"],
                        row["mu"], row["r_k"], row["repeat"], row["status"])
    return report


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def emit_report(report: EvalReport, directory) -> dict:
    """Write results.csv, summary.csv, summary.json, curves.csv and timings.csv.

    Everything except timings.csv is a deterministic function of the config.
    """
    if not report.rows:
        raise ValueError("report is empty")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in
             ("results.csv", "summary.csv", "summary.json", "curves.csv", "timings.csv")}
    _write_csv(paths["results.csv"], RESULT_FIELDS, report.rows)
    summary = report.summary()
    _write_csv(paths["summary.csv"], list(summary[0]), summary)
    best = report.best_cells()
    with open(paths["summary.json"], "w") as fh:
        json.dump(_json_safe({"config": report.config.to_dict(), "best": best, "summary": summary}),
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    key = lambda r: (r["variant"], r["lam"], r["mu"], r["r_k"])
    best_keys = {key(e) for e in best.values()}
    curve_rows = []
    for row, curve in zip(report.rows, report.curves):
        if key(row) in best_keys:
            for it, (rec, lab, pen) in enumerate(curve, 1):
                curve_rows.append(dict(variant=row["variant"], repeat=row["repeat"], iteration=it,
                                       reconstruction=rec, label=lab, hsic=pen, total=rec + lab + pen))
    _write_csv(paths["curves.csv"], ("variant", "repeat", "iteration", "reconstruction", "label",
                                     "hsic", "total"), curve_rows)
    timing_rows = [dict(row, runtime=t) for row, t in zip(report.rows, report.runtimes)]
    _write_csv(paths["timings.csv"], ("variant", "lam", "mu", "r_k", "repeat", "runtime"), timing_rows)
    return paths
