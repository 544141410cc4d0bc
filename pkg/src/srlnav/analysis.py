"""Representation diagnostics: PCA, component counting, correlations,
reward-bin clustering, and multi-target separation.

Everything here is a pure function over collected state samples.  Ground
truth in a sample always comes from the simulator, never from an encoder,
so the diagnostics measure the representation against reality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .rl import select_action

TRUTH_CHANNELS = ("x", "y", "theta", "distance")


@dataclass
class StateSample:
    state: np.ndarray  # (n,) encoder output
    x: float
    y: float
    theta: float
    distance: float
    theta_err: float  # signed heading error toward the active target
    reward: float
    target_id: int


def collect_states(env, encoder, qnet, n_samples: int, rng: np.random.Generator,
                   eps: float = 0.2) -> list[StateSample]:
    """Roll out an eps-greedy policy (or uniform if qnet is None) and record
    one sample per step, taken after the step so state, truth and reward all
    describe the same instant."""
    samples: list[StateSample] = []
    while len(samples) < n_samples:
        obs = env.reset(rng)
        truth = env.current_truth()
        while True:
            if qnet is None:
                action = int(rng.integers(3))
            else:
                action = select_action(qnet, encoder.from_step(obs, truth), eps, rng)
            result = env.step(action)
            obs, truth = result.observation, result.truth
            samples.append(StateSample(
                np.asarray(encoder.from_step(obs, truth), dtype=np.float64),
                truth.pose.x, truth.pose.y, truth.pose.theta, truth.distance,
                env.current_heading_error(), result.reward, truth.target_id,
            ))
            if result.terminal != "none" or len(samples) >= n_samples:
                break
    return samples


def state_matrix(samples: list[StateSample]) -> np.ndarray:
    return np.array([s.state for s in samples])


def truth_channel(samples: list[StateSample], name: str) -> np.ndarray:
    if name not in TRUTH_CHANNELS:
        raise ContractViolation(f"unknown truth channel {name!r}")
    return np.array([getattr(s, name) for s in samples])


# -- PCA -------------------------------------------------------------------


def jacobi_eigh(a: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues, eigenvectors-as-columns), unsorted.  Adequate for
    the small covariance matrices here (n <= 100).
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ContractViolation("matrix must be symmetric")
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a) + 1e-300
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-14 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * scale:
                    continue
                # classic 2x2 rotation that zeroes a[p, q]
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(tau * tau + 1.0)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * rp - s * rq
                a[:, q] = s * rp + c * rq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


@dataclass
class PcaResult:
    mean: np.ndarray  # (n,)
    axes: np.ndarray  # (n, n) rows are principal axes, orthonormal
    ratios: np.ndarray  # (n,) explained-variance ratios, descending, sum 1
    scores: np.ndarray  # (m, n) projections of the centered samples


def pca(samples: list[StateSample]) -> PcaResult:
    s = state_matrix(samples)
    m = len(s)
    if m < 2:
        raise ContractViolation("PCA needs at least 2 samples")
    mean = s.mean(axis=0)
    centered = s - mean
    cov = centered.T @ centered / (m - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)  # covariance is PSD; clip roundoff
    axes = eigvecs[:, order].T
    # sign convention: largest-magnitude entry of each axis is positive,
    # so identical data always yields identical axes and scores
    for k in range(len(axes)):
        j = np.argmax(np.abs(axes[k]))
        if axes[k, j] < 0:
            axes[k] = -axes[k]
    total = eigvals.sum()
    if total <= 0.0:
        raise ContractViolation("zero total variance: all states identical")
    return PcaResult(mean, axes, eigvals / total, centered @ axes.T)


def count_components(result: PcaResult, threshold: float) -> int:
    """Number of components whose explained-variance ratio is >= threshold."""
    return int(np.sum(result.ratios >= threshold))


@dataclass
class CorrelationTable:
    r: np.ndarray  # (components, channels) Pearson coefficients
    channels: tuple[str, ...]
    zero_variance: np.ndarray  # (channels,) flags; flagged entries report r=0


def correlation_table(result: PcaResult, samples: list[StateSample]) -> CorrelationTable:
    m = len(samples)
    if m < 3:
        raise ContractViolation("correlation needs at least 3 samples")
    chans = np.column_stack([truth_channel(samples, c) for c in TRUTH_CHANNELS])
    chans_c = chans - chans.mean(axis=0)
    chan_sd = chans_c.std(axis=0)
    flags = chan_sd == 0.0
    scores_c = result.scores - result.scores.mean(axis=0)
    score_sd = scores_c.std(axis=0)
    r = np.zeros((result.scores.shape[1], len(TRUTH_CHANNELS)))
    for k in range(r.shape[0]):
        if score_sd[k] == 0.0:
            continue  # dead component: leave its row at 0
        for c in range(r.shape[1]):
            if flags[c]:
                continue
            r[k, c] = np.mean(scores_c[:, k] * chans_c[:, c]) / (score_sd[k] * chan_sd[c])
    return CorrelationTable(np.clip(r, -1.0, 1.0), TRUTH_CHANNELS, flags)


# -- reward-bin clustering -------------------------------------------------


@dataclass
class ClusterReport:
    intra: float  # mean pairwise state distance within bins
    inter: float  # mean pairwise state distance across bins
    ratio: float  # intra / inter; lower = tighter reward-aligned clustering
    requested_bins: int
    effective_bins: int  # non-empty bins actually used
    merged_empty: bool  # True when empty bins had to be merged away


def _pairwise_sums(s: np.ndarray, bins: np.ndarray, block: int = 512):
    """Sums and counts of pairwise distances, split same-bin/cross-bin.

    Works on the full ordered-pair matrix blockwise, then halves; the zero
    diagonal contributes nothing to sums and is excluded from counts.
    """
    m = len(s)
    sq = np.einsum("ij,ij->i", s, s)
    same_sum = total_sum = 0.0
    for lo in range(0, m, block):
        hi = min(lo + block, m)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (s[lo:hi] @ s.T)
        np.maximum(d2, 0.0, out=d2)
        d = np.sqrt(d2)
        total_sum += d.sum()
        same = bins[lo:hi, None] == bins[None, :]
        same_sum += d[same].sum()
    counts = np.bincount(bins)
    same_pairs = int(np.sum(counts * (counts - 1)) // 2)
    all_pairs = m * (m - 1) // 2
    return same_sum / 2.0, same_pairs, total_sum / 2.0 - same_sum / 2.0, all_pairs - same_pairs


def reward_bin_clustering(samples: list[StateSample], n_bins: int, key: str) -> ClusterReport:
    """Equal-width binning of a reward-defining quantity; compares state
    distances within bins to distances across bins.

    key "distance" bins on distance-to-target, "orientation" on absolute
    heading error (the quantity the orientation reward is driven by).
    """
    if key == "distance":
        values = np.array([s.distance for s in samples])
    elif key == "orientation":
        values = np.abs([s.theta_err for s in samples])
    else:
        raise ContractViolation(f"unknown clustering key {key!r}")
    if n_bins < 2:
        raise ContractViolation("need at least 2 bins")
    lo, hi = values.min(), values.max()
    if hi <= lo:
        raise ContractViolation("key has zero range: only a single bin exists")
    bins = np.minimum((n_bins * (values - lo) / (hi - lo)).astype(np.int64), n_bins - 1)
    occupied = np.unique(bins)
    if len(occupied) < 2:
        raise ContractViolation("all samples fall into one bin")
    # an empty bin holds no pairs, so merging it into a neighbor is exactly
    # the same as dropping it; only the effective bin count changes
    merged = len(occupied) < n_bins
    bins = np.searchsorted(occupied, bins)
    s = state_matrix(samples)
    same_sum, same_n, cross_sum, cross_n = _pairwise_sums(s, bins)
    intra = same_sum / same_n if same_n else 0.0
    inter = cross_sum / cross_n
    if inter <= 0.0:
        raise ContractViolation("zero inter-bin distance: all states identical")
    return ClusterReport(intra, inter, intra / inter, n_bins, len(occupied), merged)


# -- multi-target separation -----------------------------------------------


def target_separation(samples: list[StateSample],
                      labels: np.ndarray | None = None) -> float:
    """Between-target centroid distance over mean within-target spread.

    labels overrides the stored target ids (used for permutation baselines).
    """
    s = state_matrix(samples)
    ids = np.array([x.target_id for x in samples]) if labels is None else np.asarray(labels)
    uniq = np.unique(ids)
    if len(uniq) < 2:
        raise ContractViolation("need samples from at least 2 targets")
    centroids, spreads = [], []
    for t in uniq:
        group = s[ids == t]
        if len(group) < 2:
            raise ContractViolation(f"target {t} has fewer than 2 samples")
        c = group.mean(axis=0)
        centroids.append(c)
        spreads.append(np.mean(np.linalg.norm(group - c, axis=1)))
    centroids = np.array(centroids)
    dists = [np.linalg.norm(centroids[i] - centroids[j])
             for i in range(len(uniq)) for j in range(i + 1, len(uniq))]
    num = float(np.mean(dists))
    denom = float(np.mean(spreads))
    if num == 0.0:
        return 0.0
    return np.inf if denom == 0.0 else num / denom


def separation_baseline(samples: list[StateSample], n_permutations: int,
                        rng: np.random.Generator) -> float:
    """Mean separation score under randomly shuffled target labels."""
    ids = np.array([s.target_id for s in samples])
    scores = []
    for _ in range(n_permutations):
        scores.append(target_separation(samples, labels=rng.permutation(ids)))
    return float(np.mean(scores))


# -- CSV / plot export -----------------------------------------------------


def write_samples_csv(samples: list[StateSample], path) -> None:
    n = len(samples[0].state) if samples else 0
    cols = [f"state_{k}" for k in range(n)]
    cols += ["x", "y", "theta", "distance", "theta_err", "reward", "target_id"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for s in samples:
            vals = [repr(float(v)) for v in s.state]
            vals += [repr(float(v)) for v in
                     (s.x, s.y, s.theta, s.distance, s.theta_err, s.reward)]
            vals.append(str(s.target_id))
            fh.write(",".join(vals) + "\n")


def write_variance_csv(result: PcaResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("component,explained_variance_ratio\n")
        for k, r in enumerate(result.ratios):
            fh.write(f"{k},{float(r)!r}\n")


def write_correlation_csv(table: CorrelationTable, path) -> None:
    with open(path, "w") as fh:
        fh.write("component," + ",".join(table.channels) + "\n")
        for k, row in enumerate(table.r):
            fh.write(f"{k}," + ",".join(repr(float(v)) for v in row) + "\n")
        fh.write("zero_variance_flag," + ",".join(str(int(f)) for f in table.zero_variance) + "\n")


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_variance_spectrum(result: PcaResult, path, threshold: float = 0.05) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(np.arange(len(result.ratios)), result.ratios)
    ax.axhline(threshold, color="crimson", linewidth=1, linestyle="--")
    ax.set_xlabel("component")
    ax.set_ylabel("explained variance ratio")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_scores_vs_truth(result: PcaResult, samples: list[StateSample],
                         component: int, channel: str, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.scatter(truth_channel(samples, channel), result.scores[:, component], s=4, alpha=0.5)
    ax.set_xlabel(channel)
    ax.set_ylabel(f"PC{component} score")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_scores_2d(result: PcaResult, samples: list[StateSample], color_by: str, path) -> None:
    """First two component scores, colored by a truth channel or target id."""
    if result.scores.shape[1] < 2:
        raise ContractViolation("need at least 2 components to plot")
    plt = _plt()
    if color_by == "target_id":
        c = [s.target_id for s in samples]
    elif color_by == "reward":
        c = [s.reward for s in samples]
    else:
        c = truth_channel(samples, color_by)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    sc = ax.scatter(result.scores[:, 0], result.scores[:, 1], c=c, s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label=color_by)
    ax.set_xlabel("PC0")
    ax.set_ylabel("PC1")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
