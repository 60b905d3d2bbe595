"""Command-line interface.

Subcommands cover each pipeline stage plus `pipeline` for the whole
run, `simulate`/`drift` for synthetic experiments, and `report` for
chart rendering.  Exit codes: 0 success, 1 validation or runtime
failure (message on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from .config import PathSettings, PipelineConfig
from .errors import HedonixError
from .pipeline import run_pipeline, run_stage
from .presets import market_preset, small_pipeline_config
from .synth import MarketSpec, drift_experiment


def _apply_thread_cap() -> None:
    raw = os.environ.get("HEDONIC_THREADS")
    if not raw:
        return
    try:
        cap = max(int(raw), 1)
    except ValueError:
        return
    try:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config)
    elif getattr(args, "preset", None):
        cfg = small_pipeline_config(args.out or "out", seed=args.seed or 0)
    else:
        raise HedonixError("pass --config FILE or --preset small")
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, output_dir=args.out))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        if cfg.synthetic is not None:
            cfg = dataclasses.replace(cfg, synthetic=dataclasses.replace(cfg.synthetic, seed=args.seed))
    return cfg


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline configuration JSON file")
    p.add_argument("--preset", choices=["small"], help="bundled synthetic quickstart config")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int, help="override every configured seed")


def _cmd_stage(stage: str):
    def handler(args) -> int:
        cfg = _load_config(args)
        written = run_stage(cfg, stage)
        if written:
            print(f"{stage}: wrote {len(written)} artifacts to {cfg.paths.output_dir}")
        else:
            print(f"{stage}: up to date")
        return 0

    return handler


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    written = run_pipeline(cfg)
    print(f"pipeline: {len(written)} artifacts in {cfg.paths.output_dir}")
    return 0


def _cmd_simulate(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = MarketSpec.from_json(fh.read())
    else:
        spec = market_preset(args.market or "small", seed=args.seed or 0)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    cfg = PipelineConfig(
        seed=spec.seed, paths=PathSettings(output_dir=args.out), synthetic=spec
    )
    written = run_stage(cfg, "simulate")
    print(f"simulate: wrote {len(written)} artifacts to {args.out}")
    return 0


def _cmd_drift(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = MarketSpec.from_json(fh.read())
    else:
        spec = market_preset("drift", seed=args.seed or 0)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    stats = drift_experiment(spec, replications=args.reps, horizon=args.horizon)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "drift.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "fine_abs_log_drift", "coarse_abs_log_drift"])
        for k in range(stats.replications):
            w.writerow([k, f"{stats.fine_drift[k]:.12g}", f"{stats.coarse_drift[k]:.12g}"])
    summary = {
        "horizon": stats.horizon,
        "fine_lag": stats.fine_lag,
        "coarse_lag": stats.coarse_lag,
        "mean_fine_drift": stats.mean_fine,
        "mean_coarse_drift": stats.mean_coarse,
        "frac_fine_exceeds_coarse": stats.frac_fine_exceeds,
        "replications": stats.replications,
    }
    with open(os.path.join(args.out, "drift_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(
        f"drift: mean |log drift| lag {stats.fine_lag} = {stats.mean_fine:.4f}, "
        f"lag {stats.coarse_lag} = {stats.mean_coarse:.4f}, "
        f"fine exceeds coarse in {100 * stats.frac_fine_exceeds:.0f}% of runs"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hedonix",
        description="Hedonic price models and quality-adjusted price indices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in ("ingest", "embed", "train", "infer", "index", "report"):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_config_args(p)
        p.set_defaults(handler=_cmd_stage(stage))

    p = sub.add_parser("pipeline", help="run every stage in order")
    _add_config_args(p)
    p.set_defaults(handler=_cmd_pipeline)

    p = sub.add_parser("simulate", help="generate a synthetic market")
    p.add_argument("--spec", help="market spec JSON file")
    p.add_argument("--market", choices=["small", "uniform", "benchmark", "drift"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("drift", help="run the chain-drift experiment")
    p.add_argument("--spec", help="market spec JSON file (stationary, noisy)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=_cmd_drift)
    return parser


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except HedonixError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
