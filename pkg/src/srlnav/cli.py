"""Command-line driver: train, analyze, sweep-statedim, compare, eval.

Exit codes: 0 success, 2 configuration problem (bad file, bad flag value,
unknown key), 3 runtime failure (corrupt checkpoint, shape mismatch, ...).
"""

from __future__ import annotations

import argparse
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import experiments as ex
from .config import ExperimentConfig, config_hash, load_config
from .env import NavEnv
from .errors import ConfigError, ContractViolation
from .nn import network_from_dict
from .rl import evaluate
from .seeding import substream


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _train_one(payload):
    cfg, seed, run_dir = payload
    run_dir = Path(run_dir)
    if run_dir.exists():
        shutil.rmtree(run_dir)  # re-running a seed replaces its artifacts
    run_dir.mkdir(parents=True)
    ex.execute_run(cfg, seed, run_dir)
    return run_dir


def _pmap(fn, payloads, threads: int):
    if threads <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, payloads))


def cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = config_hash(cfg)
    payloads = [(cfg, seed, str(out / f"{tag}_seed{seed}")) for seed in cfg.seeds]
    for run_dir in _pmap(_train_one, payloads, args.threads):
        print(f"trained seed dir: {run_dir}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load(args)
    seed = cfg.seeds[0]
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "analysis"
    summary = ex.analyze_checkpoint(cfg, args.checkpoint, out, seed)
    print(f"components: {summary['components']}")
    for channel, r in summary["corr_max_abs"].items():
        print(f"max |corr| {channel}: {r:.3f}")
    print(f"analysis dir: {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        dims = [int(v) for v in args.dims.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--dims must be a comma-separated list of ints: {e}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ex.sweep_statedim(cfg, dims, out / "cache")
    path = out / "statedim_summary.csv"
    ex.write_rows_csv(path, rows, ex.STATEDIM_COLUMNS)
    print(f"{len(rows)} rows -> {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary, curves = ex.compare_conditions(cfg, out / "cache")
    ex.write_rows_csv(out / "compare_summary.csv", summary, ex.COMPARE_COLUMNS)
    ex.write_rows_csv(out / "compare_curves.csv", curves, ex.CURVE_COLUMNS)
    for row in summary:
        print(
            f"{row['condition']:6s} seed {row['seed']}: "
            f"final300 {row['final_return_300']:9.2f}  "
            f"best-success {row['best_success_50']:.2f}"
        )
    print(f"curves -> {out / 'compare_curves.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    seed = cfg.seeds[0]
    loaded = ex.load_checkpoint(args.checkpoint)
    encoder = ex.encoder_from_checkpoint(cfg, loaded)
    qnet = loaded["qnet"]
    if qnet.in_size != encoder.dim:
        raise ContractViolation(
            f"checkpoint Q-net expects {qnet.in_size} inputs "
            f"but the encoder produces {encoder.dim}"
        )
    env = NavEnv(cfg.env)
    episodes = args.episodes or cfg.agent.eval_episodes
    success, crash, mean_ret = evaluate(
        env, encoder, qnet, episodes, cfg.agent.gamma, substream(seed, "eval")
    )
    print(
        f"episodes {episodes}  success {success:.3f}  "
        f"crash {crash:.3f}  mean_return {mean_ret:.3f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srlnav",
        description="Robot-prior state representation learning on 2D navigation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="single seed overriding the config's list")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel seed workers (train/sweep/compare)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint JSON")

    p = sub.add_parser("train", help="run training for every configured seed")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("analyze", help="representation diagnostics for a checkpoint")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("sweep-statedim", help="full trainings across state dimensions")
    common(p)
    p.add_argument("--dims", default="2,10,100", help="comma-separated state sizes")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("compare", help="truth vs SRL vs raw-observation conditions")
    common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("eval", help="greedy rollouts of a trained checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--episodes", type=int, default=0,
                   help="rollout count (default: config eval_episodes)")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ContractViolation as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
