"""Seeded end-to-end runs plus the multi-run drivers behind the headline
comparisons (condition compare, state-dimension sweep, representation
diagnostics).

A run directory is the atom of caching.  Its name is the config hash plus
the seed, the manifest is written last, and only a directory containing a
manifest counts as complete.  Because config + seed determine every output
byte, a cached run is interchangeable with a fresh one.
"""

from __future__ import annotations

import copy
import csv
import json
import os
import shutil
from pathlib import Path

import numpy as np

from . import __version__, nn, srl
from .analysis import (
    collect_states,
    correlation_table,
    count_components,
    pca,
    plot_scores_2d,
    plot_scores_vs_truth,
    plot_variance_spectrum,
    reward_bin_clustering,
    separation_baseline,
    target_separation,
    write_correlation_csv,
    write_samples_csv,
    write_variance_csv,
)
from .config import (
    ExperimentConfig,
    RunManifest,
    Stopwatch,
    config_hash,
    save_config,
    write_manifest,
)
from .env import NavEnv
from .errors import ContractViolation
from .replay import TERMINAL_CODES
from .rl import (
    ObsEncoder,
    SrlEncoder,
    TruthEncoder,
    make_qnet,
    run_training,
    write_eval_log,
    write_training_log,
)
from .seeding import RunStreams, substream

CHECKPOINT_FORMAT = "srlnav-run-v1"
CONDITIONS = ("truth", "srl", "obs")  # order used in comparison tables

COMPARE_COLUMNS = [
    "condition", "seed", "final_return_300", "best_success_50",
    "episodes_to_half", "crash_ratio_200",
]
CURVE_COLUMNS = ["condition", "seed", "episode", "return"]
STATEDIM_COLUMNS = [
    "state_dim", "seed", "crash_ratio_200", "episodes_to_half", "final_return_300",
]


# -- config derivation -----------------------------------------------------


def with_encoder(cfg: ExperimentConfig, kind: str) -> ExperimentConfig:
    out = copy.deepcopy(cfg)
    out.encoder = kind
    out.__post_init__()
    return out


def with_statedim(cfg: ExperimentConfig, n: int) -> ExperimentConfig:
    out = copy.deepcopy(cfg)
    out.encoder = "srl"
    out.srl.n = int(n)
    return out


def representation_config(
    layout: str,
    seeds,
    reward: str = "distance",
    multi_target: bool = False,
    state_dim: int = 10,
    episodes: int = 600,
    updates: tuple[int, ...] = (200, 400),
) -> ExperimentConfig:
    """Full staggered training whose checkpoint feeds representation analysis.

    The encoder only organizes on policy-shaped trajectories: random
    wandering never concentrates the buffer into reward-aligned tubes, and
    the priors then spread states isotropically instead of along pose.  So
    representation runs are ordinary trainings, and the analysis collects
    states under the resulting policy.
    """
    cfg = ExperimentConfig()
    cfg.env.layout = layout
    cfg.env.reward = reward
    cfg.env.multi_target = multi_target
    cfg.encoder = "srl"
    cfg.srl.n = state_dim
    cfg.seeds = list(seeds)
    cfg.agent.episodes = episodes
    cfg.agent.eval_every = 0
    cfg.agent.statenet_updates = list(updates)
    return cfg


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, cfg: ExperimentConfig, qnet: nn.Network, encoder) -> None:
    d = {
        "format": CHECKPOINT_FORMAT,
        "encoder": cfg.encoder,
        "qnet": nn.network_to_dict(qnet),
        "statenet": (
            srl.statenet_to_dict(encoder.net) if isinstance(encoder, SrlEncoder) else None
        ),
    }
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_checkpoint(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as e:
        raise ContractViolation(f"cannot read checkpoint {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ContractViolation(f"corrupt checkpoint {path}: {e}") from e
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ContractViolation(f"unrecognized checkpoint format {d.get('format')!r}")
    if d.get("encoder") not in CONDITIONS:
        raise ContractViolation(f"unrecognized encoder kind {d.get('encoder')!r}")
    return d


def build_encoder(cfg: ExperimentConfig, env: NavEnv, streams: RunStreams | None):
    """Fresh encoder for training; srl draws its init from streams.init."""
    e = cfg.env
    if cfg.encoder == "truth":
        return TruthEncoder(env.world.bounds)
    if cfg.encoder == "obs":
        return ObsEncoder(e.n_beams, e.n_px, e.max_range, e.multi_target, env.world.bounds)
    net = srl.make_statenet(
        e.n_beams, e.n_px, cfg.srl.n, streams.init,
        hidden=cfg.srl.hidden, multi_target=e.multi_target,
        max_range=e.max_range, bounds=env.world.bounds,
    )
    opt = srl.StateNetOptimizer.fresh(cfg.srl.learning_rate)
    return SrlEncoder(net, cfg.srl, opt, streams.srl)


def encoder_from_checkpoint(d: dict, cfg: ExperimentConfig, env: NavEnv):
    """Rebuild the encoder a checkpoint was trained with, for analysis."""
    e = cfg.env
    kind = d["encoder"]
    if kind == "truth":
        return TruthEncoder(env.world.bounds)
    if kind == "obs":
        return ObsEncoder(e.n_beams, e.n_px, e.max_range, e.multi_target, env.world.bounds)
    if d.get("statenet") is None:
        raise ContractViolation("srl checkpoint is missing its state networks")
    net = srl.statenet_from_dict(d["statenet"])
    if net.n_beams != e.n_beams or net.n_px != e.n_px:
        raise ContractViolation(
            f"checkpoint sensors ({net.n_beams} beams, {net.n_px} px) do not match "
            f"the config ({e.n_beams} beams, {e.n_px} px)"
        )
    return SrlEncoder(net)


# -- one seeded run --------------------------------------------------------


def execute_run(cfg: ExperimentConfig, seed: int, run_dir) -> RunManifest:
    """Train once and write every artifact into run_dir (manifest last)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    streams = RunStreams.from_seed(seed)
    env = NavEnv(cfg.env)
    with Stopwatch() as sw:
        encoder = build_encoder(cfg, env, streams)
        qnet = make_qnet(encoder.dim, cfg.agent.hidden, streams.init)
        result = run_training(env, encoder, qnet, cfg.agent, streams)
    write_training_log(result.episodes, run_dir / "training_log.csv")
    write_eval_log(result.evals, run_dir / "eval_log.csv")
    save_checkpoint(run_dir / "checkpoint.json", cfg, result.qnet, encoder)
    if isinstance(encoder, SrlEncoder):
        for i, report in enumerate(encoder.training_reports, start=1):
            srl.write_srl_report(report, run_dir / f"srl_report_{i}.csv")
    resolved = copy.deepcopy(cfg)
    resolved.seeds = [seed]
    save_config(resolved, run_dir / "config.cfg")
    outputs = sorted(p.name for p in run_dir.iterdir())
    manifest = RunManifest(
        config_hash=config_hash(cfg),
        seed=seed,
        version=__version__,
        duration_s=sw.elapsed,
        outputs=outputs,
    )
    write_manifest(manifest, run_dir / "manifest.json")
    return manifest


def cached_run(cfg: ExperimentConfig, seed: int, cache_root) -> Path:
    """Return a complete run directory, training only when missing."""
    run_dir = Path(cache_root) / f"{config_hash(cfg)}_seed{seed}"
    if (run_dir / "manifest.json").exists():
        return run_dir
    tmp = Path(str(run_dir) + ".tmp")
    for leftover in (run_dir, tmp):
        if leftover.exists():
            shutil.rmtree(leftover)
    execute_run(cfg, seed, tmp)
    os.replace(tmp, run_dir)
    return run_dir


# -- metrics over training logs --------------------------------------------


def read_training_log(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {
        "episode": np.array([int(r["episode"]) for r in rows]),
        "return": np.array([float(r["return"]) for r in rows]),
        "steps": np.array([int(r["steps"]) for r in rows]),
        "terminal": np.array([TERMINAL_CODES[r["terminal"]] for r in rows]),
        "epsilon": np.array([float(r["epsilon"]) for r in rows]),
    }


def rolling_fraction(flags: np.ndarray, window: int) -> np.ndarray:
    """Trailing-window mean of a 0/1 series, partial windows at the start."""
    c = np.cumsum(np.concatenate([[0], flags.astype(float)]))
    n = len(flags)
    lo = np.maximum(0, np.arange(n) + 1 - window)
    return (c[1:] - c[lo]) / (np.arange(n) + 1 - lo)


def episodes_to_success(terminals: np.ndarray, level: float, window: int = 50) -> int:
    """First episode (1-based) whose trailing success window reaches level;
    -1 if the run never gets there."""
    frac = rolling_fraction(terminals == 1, window)
    hits = np.nonzero(frac >= level)[0]
    return int(hits[0]) + 1 if len(hits) else -1


def final_mean_return(returns: np.ndarray, k: int = 300) -> float:
    return float(np.mean(returns[-k:]))


def crash_ratio_tail(terminals: np.ndarray, k: int = 200) -> float:
    return float(np.mean(terminals[-k:] == 2))


def run_summary(run_dir, window: int = 50) -> dict:
    log = read_training_log(Path(run_dir) / "training_log.csv")
    return {
        "final_return_300": final_mean_return(log["return"]),
        "best_success_50": float(np.max(rolling_fraction(log["terminal"] == 1, window))),
        "episodes_to_half": episodes_to_success(log["terminal"], 0.5, window),
        "crash_ratio_200": crash_ratio_tail(log["terminal"]),
    }


# -- multi-run drivers -----------------------------------------------------


def write_rows_csv(rows: list[dict], columns: list[str], path) -> None:
    def fmt(v):
        return repr(v) if isinstance(v, float) else str(v)

    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(row[c]) for c in columns) + "\n")


def compare_conditions(cfg: ExperimentConfig, cache_root, progress=None):
    """Matched truth/srl/obs runs sharing seeds.

    The env substream depends only on the seed and resets draw identically
    for every condition, so all three see the same spawn sequence.
    Returns (summary rows, per-episode curve rows).
    """
    rows, curves = [], []
    for kind in CONDITIONS:
        ccfg = with_encoder(cfg, kind)
        for seed in cfg.seeds:
            run_dir = cached_run(ccfg, seed, cache_root)
            if progress is not None:
                progress(f"{kind} seed {seed}: {run_dir}")
            rows.append({"condition": kind, "seed": seed, **run_summary(run_dir)})
            log = read_training_log(run_dir / "training_log.csv")
            curves.extend(
                {"condition": kind, "seed": seed, "episode": int(e), "return": float(r)}
                for e, r in zip(log["episode"], log["return"])
            )
    return rows, curves


def sweep_statedim(cfg: ExperimentConfig, dims, cache_root, progress=None):
    """Full SRL training per state dimension per seed; one summary table."""
    if not dims:
        raise ContractViolation("state-dimension sweep needs a non-empty dims list")
    rows = []
    for dim in dims:
        dcfg = with_statedim(cfg, dim)
        for seed in cfg.seeds:
            run_dir = cached_run(dcfg, seed, cache_root)
            if progress is not None:
                progress(f"n={dim} seed {seed}: {run_dir}")
            rows.append({"state_dim": int(dim), "seed": seed, **run_summary(run_dir)})
    return [
        {k: r[k] for k in STATEDIM_COLUMNS} for r in rows
    ]


# -- representation analysis ----------------------------------------------


def analyze_checkpoint(cfg: ExperimentConfig, checkpoint_path, out_dir, seed: int) -> dict:
    """The full diagnostic chain over one trained checkpoint.

    The checkpoint is loaded and validated before anything is written, so a
    corrupt file leaves no partial outputs.  Returns the summary dict that
    is also written as analysis_summary.json.
    """
    d = load_checkpoint(checkpoint_path)
    env = NavEnv(cfg.env)
    encoder = encoder_from_checkpoint(d, cfg, env)
    qnet = nn.network_from_dict(d["qnet"])
    if qnet.in_size != encoder.dim:
        raise ContractViolation(
            f"checkpoint Q-net expects {qnet.in_size} inputs but the encoder "
            f"produces {encoder.dim}"
        )
    a = cfg.analysis
    policy = qnet if a.use_policy else None

    samples = collect_states(
        env, encoder, policy, a.n_samples, substream(seed, "analysis"), a.eps
    )
    # raw-observation baseline; under the uniform policy the reseeded stream
    # replays the identical trajectory, giving a paired comparison
    raw_encoder = ObsEncoder(
        cfg.env.n_beams, cfg.env.n_px, cfg.env.max_range,
        cfg.env.multi_target, env.world.bounds,
    )
    raw_samples = collect_states(
        env, raw_encoder, None, a.n_samples, substream(seed, "analysis"), a.eps
    )

    result = pca(samples)
    table = correlation_table(result, samples)
    summary = {
        "seed": seed,
        "components": count_components(result, a.threshold),
        "corr_max_abs": {
            ch: float(np.max(np.abs(table.r[:, i])))
            for i, ch in enumerate(table.channels)
        },
        "clustering": {},
    }
    for space, group in (("state", samples), ("rawobs", raw_samples)):
        for key in ("distance", "orientation"):
            report = reward_bin_clustering(group, a.n_bins, key)
            summary["clustering"][f"{space}_{key}"] = report.ratio
    if cfg.env.multi_target:
        score = target_separation(samples)
        baseline = separation_baseline(samples, a.permutations, substream(seed, "shuffle"))
        summary["separation"] = {
            "score": score,
            "baseline_mean": float(np.mean(baseline)),
            "baseline_max": float(np.max(baseline)),
        }

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_samples_csv(samples, out_dir / "samples.csv")
    write_variance_csv(result, out_dir / "variance.csv")
    write_correlation_csv(table, out_dir / "correlation.csv")
    clustering_rows = [
        {"space": space_key.rsplit("_", 1)[0], "key": space_key.rsplit("_", 1)[1],
         "ratio": ratio}
        for space_key, ratio in summary["clustering"].items()
    ]
    write_rows_csv(clustering_rows, ["space", "key", "ratio"], out_dir / "clustering.csv")
    plot_variance_spectrum(result, out_dir / "variance_spectrum.svg", a.threshold)
    plot_scores_vs_truth(result, samples, 0, "x", out_dir / "pc0_vs_x.svg")
    plot_scores_vs_truth(result, samples, 0, "distance", out_dir / "pc0_vs_distance.svg")
    plot_scores_2d(result, samples, "distance", out_dir / "scores_by_distance.svg")
    if cfg.env.multi_target:
        plot_scores_2d(result, samples, "target_id", out_dir / "scores_by_target.svg")
    with open(out_dir / "analysis_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def cached_analysis(cfg: ExperimentConfig, seed: int, cache_root) -> dict:
    """Train (cached) then analyze (cached) one seed; returns the summary."""
    run_dir = cached_run(cfg, seed, cache_root)
    out_dir = run_dir / "analysis"
    marker = out_dir / "analysis_summary.json"
    if marker.exists():
        with open(marker) as fh:
            return json.load(fh)
    return analyze_checkpoint(cfg, run_dir / "checkpoint.json", out_dir, seed)


def representation_summaries(cfg: ExperimentConfig, cache_root, progress=None) -> list[dict]:
    out = []
    for seed in cfg.seeds:
        summary = cached_analysis(cfg, seed, cache_root)
        if progress is not None:
            progress(f"seed {seed}: {summary['components']} components")
        out.append(summary)
    return out
