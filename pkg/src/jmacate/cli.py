"""Command-line entry point: ``jmacate {simulate,weights-consistency,guided,estimate,synth}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import CALIBRATION_SEED, SimConfig, calibrate_c, generate_example1, generate_nswd_like
from .errors import ConfigInvalid, CsvInvalid, JmaError
from .fileio import candidates_to_json, read_candidates, read_config, read_dataset, write_dataset
from .harness import ResultsTable, StudyConfig, estimate, run_guided, run_study, weights_consistency

logger = logging.getLogger("jmacate")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, command: str, config: dict, seed: int, started: str,
                    table: ResultsTable | None = None, extra: dict | None = None) -> None:
    manifest = {
        "manifest_version": 1,
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": started,
        "finished": _now(),
    }
    if table is not None:
        manifest["replication_seeds"] = [
            {"cell": list(r.cell), "rep": r.rep, "seed_sequence": r.seed, "attempts": r.attempts}
            for r in table.replications
        ]
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n",
                                       encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_tables(out: Path, table: ResultsTable) -> None:
    write_csv(out / "results.csv", table.rows())
    write_csv(out / "summary.csv", table.summary())
    write_csv(out / "replications.csv", table.replication_rows())
    write_csv(out / "weights.csv", table.weight_rows())


def _print_summary(table: ResultsTable, stream=None) -> None:
    w = csv.writer(stream or sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["n", "r2", "rho", "design", "method", "mean_ase", "mean_normalized_risk"])
    for r in table.summary():
        if r["method"].startswith("model"):
            continue
        w.writerow([r["n"], r["r2"], r["rho"], r["design"], r["method"],
                    f"{r['mean_ase']:.6g}", f"{r['mean_normalized_risk']:.6g}"])


def _study_config(args, **forced) -> StudyConfig:
    if not args.config:
        raise ConfigInvalid("--config is required")
    obj = read_config(args.config)
    obj.update(forced)
    return StudyConfig.from_mapping(obj, seed=args.seed)


def cmd_simulate(args) -> int:
    started = _now()
    cfg = _study_config(args)
    table = run_study(cfg, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_tables(out, table)
    calib = {} if cfg.c is not None else {
        f"{r2},{rho},{d}": calibrate_c(r2, rho, d, n_mc=cfg.n_mc, seed=cfg.calibration_seed)
        for _, r2, rho, d in cfg.cells()}
    _write_manifest(out, "simulate", cfg.to_dict(), cfg.seed, started, table, {"calibrated_c": calib})
    _print_summary(table)
    return EXIT_OK


def cmd_weights_consistency(args) -> int:
    started = _now()
    obj = read_config(args.config) if args.config else {}
    obj.setdefault("example", 2)
    obj.setdefault("n", [200, 400, 800])
    cfg = StudyConfig.from_mapping(obj, seed=args.seed)
    if cfg.n_correct < 1:
        raise ConfigInvalid("weights-consistency needs n_correct >= 1")
    table, curve = weights_consistency(cfg, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_tables(out, table)
    rows = [{"n": n, "r2": c[1], "rho": c[2], "design": c[3], "mean_w_delta": table.mean_w_delta(c),
             "min_w_delta": min(r.w_delta for r in table.replications if r.cell == c),
             "max_w_delta": max(r.w_delta for r in table.replications if r.cell == c)}
            for c in cfg.cells() for n in [c[0]]]
    write_csv(out / "consistency.csv", rows)
    _write_manifest(out, "weights-consistency", cfg.to_dict(), cfg.seed, started, table,
                    {"mean_w_delta_by_n": {str(k): v for k, v in curve.items()}})
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["n", "r2", "rho", "design", "mean_w_delta"])
    for r in rows:
        w.writerow([r["n"], r["r2"], r["rho"], r["design"], f"{r['mean_w_delta']:.6g}"])
    return EXIT_OK


def _match_dims(text):
    if text is None:
        return None
    try:
        dims = tuple(int(v) - 1 for v in text.split(","))
    except ValueError as exc:
        raise ConfigInvalid(f"--match-dims expects comma-separated covariate numbers: {exc}") from exc
    if any(d < 0 for d in dims):
        raise ConfigInvalid("--match-dims uses 1-based covariate numbers")
    return dims


def cmd_guided(args) -> int:
    started = _now()
    data = read_dataset(args.csv)
    specs = read_candidates(args.candidates)
    if not 1 <= args.true_model <= len(specs):
        raise ConfigInvalid(f"--true-model must lie in 1..{len(specs)}")
    dims = _match_dims(args.match_dims)
    if dims is not None and max(dims) >= data.p:
        raise ConfigInvalid("--match-dims refers to a missing covariate")
    table = run_guided(data, specs, args.true_model - 1, args.reps, args.seed, per_arm=args.per_arm,
                       sigma2=args.sigma2, side_length=args.side_length, match_dims=dims,
                       min_pairs=args.min_pairs, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_tables(out, table)
    config = {"csv": str(args.csv), "candidates": candidates_to_json(specs), "true_model": args.true_model,
              "reps": args.reps, "per_arm": args.per_arm, "sigma2": args.sigma2,
              "side_length": args.side_length, "match_dims": args.match_dims, "min_pairs": args.min_pairs}
    _write_manifest(out, "guided", config, args.seed, started, table,
                    {"sigma2_t": table.extra["sigma2_t"], "sigma2_c": table.extra["sigma2_c"]})
    _print_summary(table)
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = _now()
    data = read_dataset(args.csv)
    specs = read_candidates(args.candidates)
    dims = _match_dims(args.match_dims)
    if dims is not None and max(dims) >= data.p:
        raise ConfigInvalid("--match-dims refers to a missing covariate")
    jf = estimate(data, specs, args.seed, side_length=args.side_length, match_dims=dims,
                  min_pairs=args.min_pairs)
    est = jf.predict(data.X)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"row": i, "t": int(data.T[i]), "delta_hat": float(est.values[i]),
             **{f"model{k + 1}": float(est.components[i, k]) for k in range(len(specs))}}
            for i in range(data.n)]
    write_csv(out / "estimates.csv", rows)
    report = {
        "weights": jf.weights.w.tolist(),
        "candidates": [s.label() for s in specs],
        "M": jf.pairs.M,
        "h": jf.pairs.h,
        "h_initial": jf.info["h0"],
        "skipped_cells": jf.pairs.skipped_cells,
        "match_dims": [d + 1 for d in jf.match_dims],
        "cv": jf.cv,
        "solver_converged": jf.weights.converged,
        "kkt_residual": jf.weights.kkt_residual,
    }
    (out / "estimate.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    config = {"csv": str(args.csv), "candidates": candidates_to_json(specs), "side_length": args.side_length,
              "match_dims": args.match_dims, "min_pairs": args.min_pairs}
    _write_manifest(out, "estimate", config, args.seed, started)
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["candidate", "weight"])
    for s, wk in zip(specs, jf.weights.w):
        w.writerow([s.label(), f"{wk:.6g}"])
    return EXIT_OK


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.kind == "nswd":
        data, _ = generate_nswd_like(rng)
    else:
        cfg = SimConfig(n=args.n, r2=args.r2, rho=args.rho, design=args.design, n_eval=1)
        data = generate_example1(cfg.resolved(seed=CALIBRATION_SEED), rng).dataset
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(path, data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int, help="replications run concurrently")
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("--config", help="JSON or TOML run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="jmacate", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out-dir", default="jmacate-out")
    parser.add_argument("--config", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo study over a settings grid")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights-consistency", parents=[common],
                       help="mean weight on the correct candidates as n grows")
    p.set_defaults(func=cmd_weights_consistency)

    def matching_opts(p):
        p.add_argument("--side-length", type=float, default=None, help="initial cell side in the unit cube")
        p.add_argument("--match-dims", default=None, help="1-based covariates to match on, e.g. 1,2")
        p.add_argument("--min-pairs", type=int, default=None, help="coarsen cells until this many pairs")

    p = sub.add_parser("guided", parents=[common], help="guided simulation on a CSV data set")
    p.add_argument("csv")
    p.add_argument("--candidates", required=True, help="candidate models JSON")
    p.add_argument("--true-model", type=int, required=True, help="1-based index of the generating candidate")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--sigma2", type=float, default=None, help="override the estimated error variance")
    p.add_argument("--per-arm", action="store_true", help="estimate the error variance per arm")
    matching_opts(p)
    p.set_defaults(func=cmd_guided)

    p = sub.add_parser("estimate", parents=[common], help="JMA CATE estimates for a CSV data set")
    p.add_argument("csv")
    p.add_argument("--candidates", required=True, help="candidate models JSON")
    matching_opts(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic CSV data set")
    p.add_argument("output")
    p.add_argument("--kind", choices=["example", "nswd"], default="example")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--r2", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--design", type=int, choices=[1, 2], default=1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        if args.command in ("guided", "estimate", "synth") and args.seed is None:
            args.seed = 0
        if args.command in ("guided", "estimate") and args.config:
            raise ConfigInvalid(f"{args.command} takes its settings as options, not --config")
        return args.func(args)
    except (ConfigInvalid, CsvInvalid) as exc:
        print(f"jmacate: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JmaError as exc:
        print(f"jmacate: estimation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
