"""Command-line entry point: ``nail {fit,sweep,synth,eval}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 solver divergence in ``fit``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import BACKEND, __version__
from .data import (DataError, MaskSpec, SyntheticSpec, _read_csv, _write_csv, apply_feature_mask,
                   apply_label_mask, load_dataset, save_dataset, synthesize)
from .harness import ExperimentConfig, emit_report, run_experiment
from .metrics import average_precision, hamming_score
from .solver import VARIANTS, SolverDivergence, fit, predict

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _data_args(p):
    src = p.add_argument_group("data")
    src.add_argument("--manifest", help="dataset manifest JSON")
    src.add_argument("--synthetic", metavar="SPEC.json", help="synthetic dataset spec")
    src.add_argument("--subsample", type=int, help="keep this many rows (seeded by --seed)")
    src.add_argument("--mask-r", type=float, dest="mask_r", help="feature row removal rate")
    src.add_argument("--mask-s", type=float, dest="mask_s", help="label removal rate")
    src.add_argument("--seed", type=int)


def _solver_args(p, many: bool):
    nargs = "+" if many else None
    s = p.add_argument_group("solver")
    s.add_argument("--variant", nargs=nargs, choices=VARIANTS)
    s.add_argument("--lambda", dest="lam", type=float, nargs=nargs)
    s.add_argument("--mu", type=float, nargs=nargs)
    s.add_argument("--rk", dest="r_k", type=float, nargs=nargs)
    s.add_argument("--max-outer", dest="max_outer", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--strict-paper", dest="nonneg_label_weights", action="store_true", default=None,
                   help="keep the label weights nonnegative")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nail", description="Incomplete multi-view weak-label learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one configuration and write predictions")
    _data_args(p)
    _solver_args(p, many=False)
    p.add_argument("--config", help="JSON config; flags override it")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("sweep", help="grid search over repeated masked splits")
    _data_args(p)
    _solver_args(p, many=True)
    p.add_argument("--config", help="JSON config; flags override it")
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="report directory")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--synthetic", metavar="SPEC.json", help="spec file (defaults if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score stored predictions against held-out labels")
    p.add_argument("--predictions", required=True, help="n x l CSV of scores in [0, 1]")
    p.add_argument("--heldout", required=True,
                   help="n x l CSV with the true value at held-out entries and NaN elsewhere")
    p.add_argument("--threshold", type=float, default=0.5)
    return parser


# ------------------------------------------------------------------ config


_FLAG_TO_CONFIG = {"variant": "variants", "lam": "lambdas", "mu": "mus", "r_k": "r_ks"}
_PASSTHROUGH = ("manifest", "subsample", "mask_r", "mask_s", "seed", "max_outer", "tol",
                "nonneg_label_weights", "repeats", "workers")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from None


_FIT_DEFAULTS = {"lambdas": [1.0], "mus": [1.0], "r_ks": [0.5], "mask_r": 0.0, "mask_s": 0.0}


def experiment_config(args, defaults=None) -> ExperimentConfig:
    """Merge ``defaults``, ``--config`` and command-line flags (later wins)."""
    d = dict(defaults or {})
    if getattr(args, "config", None):
        d.update(_load_json(args.config))
    for flag, key in _FLAG_TO_CONFIG.items():
        value = getattr(args, flag, None)
        if value is not None:
            d[key] = value if isinstance(value, list) else [value]
    for key in _PASSTHROUGH:
        value = getattr(args, key, None)
        if value is not None:
            d[key] = value
    if getattr(args, "synthetic", None):
        d["synthetic"] = _load_json(args.synthetic)
        d.pop("manifest", None)
    elif "manifest" in d:
        d.pop("synthetic", None)
    if "synthetic" not in d and "manifest" not in d:
        raise UsageError("one of --manifest or --synthetic is required")
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    cfg = experiment_config(args, _FIT_DEFAULTS)
    if len(cfg.cells()) != 1:
        raise UsageError("fit takes a single variant, lambda, mu and r_k")
    variant, lam, mu, r_k = cfg.cells()[0]
    ds = load_dataset(cfg.manifest) if cfg.manifest else synthesize(cfg.synthetic)[0]
    mask = MaskSpec(cfg.mask_r, cfg.mask_s, cfg.seed)
    ds = apply_label_mask(apply_feature_mask(ds, mask), mask)
    scfg = cfg.solver_config(variant, lam, mu, r_k, cfg.seed)
    try:
        state, trace = fit(ds, scfg, record_substeps=False)
    except SolverDivergence as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    scores, pred = predict(state)
    summary = {"variant": variant, "lam": lam, "mu": mu, "r_k": r_k,
               "iterations": trace.iterations, "converged": trace.converged,
               "objective": trace.objectives[-1].total, "alpha": state.alpha.tolist()}
    if ds.eval_mask.any():
        summary["hs"] = hamming_score(pred, ds.label_truth, ds.eval_mask)
        try:
            summary["ap"] = average_precision(scores, ds.label_truth, ds.eval_mask)
        except ValueError:
            summary["ap"] = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        everywhere = np.ones(scores.shape, bool)
        _write_csv(out / "scores.csv", scores, everywhere)
        _write_csv(out / "labels.csv", pred, everywhere)
        _write_csv(out / "heldout.csv", ds.label_truth, ds.eval_mask)
        with open(out / "trace.csv", "w") as fh:
            fh.write("iteration,reconstruction,label,hsic,total\n")
            for i, o in enumerate(trace.objectives, 1):
                fh.write(f"{i},{o.reconstruction!r},{o.label!r},{o.hsic!r},{o.total!r}\n")
        (out / "fit.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = experiment_config(args)
    report = run_experiment(cfg)
    paths = emit_report(report, args.out)
    best = report.best_cells()
    for variant, entry in best.items():
        print(f"{variant}: lam={entry['lam']:g} mu={entry['mu']:g} r_k={entry['r_k']:g} "
              f"HS={entry['hs_mean']:.4f}±{entry['hs_std']:.4f} "
              f"AP={entry['ap_mean']:.4f}±{entry['ap_std']:.4f}")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_synth(args) -> int:
    d = _load_json(args.synthetic) if args.synthetic else {}
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        spec = SyntheticSpec(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    manifest = save_dataset(synthesize(spec)[0], args.out)
    print(manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    scores = _read_csv(Path(args.predictions))
    heldout = _read_csv(Path(args.heldout))
    if scores.shape != heldout.shape:
        raise DataError(f"predictions {scores.shape} and held-out labels {heldout.shape} differ in shape")
    mask = np.isfinite(heldout)
    truth = np.where(mask, heldout, 0.0)
    if not np.all((truth == 0) | (truth == 1)):
        raise DataError("invalid label value in held-out file")
    if not mask.any():
        raise DataError("held-out file marks no entries")
    result = {"hs": hamming_score((scores > args.threshold).astype(int), truth, mask)}
    try:
        result["ap"] = average_precision(scores, truth, mask)
    except ValueError:
        result["ap"] = None
    print(json.dumps(result))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "sweep": cmd_sweep, "synth": cmd_synth, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nail: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"nail: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
