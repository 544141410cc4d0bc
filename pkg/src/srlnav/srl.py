"""State-Net encoder and the reward-shaped prior losses.

The encoder is two branches (range scan, color strip) fused by one dense
layer; multi-target mode appends the normalized target position to the fusion
input.  Four priors shape the state space:

    temporal coherence   mean ||ds_t||^2                    (states drift slowly)
    proportionality      mean (||ds_t2|| - ||ds_t1||)^2     over similar-|dr| pairs
    causality            mean exp(-||s_t2 - s_t1||^2)       over dissimilar-r pairs
    repeatability        mean exp(-||s_t2 - s_t1||^2) * ||ds_t2 - ds_t1||^2

with ds_t = s_{t+1} - s_t.  The total training loss is the weighted sum plus
an L2 weight penalty; defaults (3, 15, 15, 15, 3).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ContractViolation
from .replay import PriorBatch, ReplayBuffer, build_prior_batch

EPS_NORM = 1e-12  # regularizes the norm gradient at ||ds|| = 0

STATENET_FORMAT = "srlnav-statenet-v1"


@dataclass
class PriorWeights:
    w1: float = 3.0
    w2: float = 15.0
    w3: float = 15.0
    w4: float = 15.0
    w5: float = 3.0

    def __post_init__(self):
        for w in (self.w1, self.w2, self.w3, self.w4, self.w5):
            if not (np.isfinite(w) and w >= 0):
                raise ContractViolation("prior weights must be non-negative and finite")


@dataclass
class StateNet:
    lidar_net: nn.Network  # n_beams -> hidden -> n
    camera_net: nn.Network  # 3*n_px -> hidden -> n
    fusion_net: nn.Network  # 2n (+2 in multi-target mode) -> n, single layer
    n: int
    n_beams: int
    n_px: int
    multi_target: bool
    max_range: float  # lidar ranges are fed as range / max_range
    bounds: tuple[float, float, float, float]  # normalizes target coordinates

    def networks(self):
        return (self.lidar_net, self.camera_net, self.fusion_net)


def make_statenet(
    n_beams: int,
    n_px: int,
    n: int,
    rng: np.random.Generator,
    hidden: int = 64,
    multi_target: bool = False,
    max_range: float = 5.0,
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 4.0, 4.0),
) -> StateNet:
    fusion_in = 2 * n + (2 if multi_target else 0)
    return StateNet(
        lidar_net=nn.init_network([n_beams, hidden, n], ["tanh", "identity"], rng),
        camera_net=nn.init_network([3 * n_px, hidden, n], ["tanh", "identity"], rng),
        fusion_net=nn.init_network([fusion_in, n], ["identity"], rng),
        n=n,
        n_beams=n_beams,
        n_px=n_px,
        multi_target=multi_target,
        max_range=max_range,
        bounds=bounds,
    )


@dataclass
class EncodeCache:
    lidar: nn.ForwardCache
    camera: nn.ForwardCache
    fusion: nn.ForwardCache


def _normalize_target(net: StateNet, target_xy: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = net.bounds
    out = np.empty_like(target_xy, dtype=np.float64)
    out[..., 0] = (target_xy[..., 0] - x0) / (x1 - x0)
    out[..., 1] = (target_xy[..., 1] - y0) / (y1 - y0)
    return out


def encode_batch(
    net: StateNet,
    lidar: np.ndarray,
    camera_flat: np.ndarray,
    target_xy: np.ndarray | None,
) -> tuple[np.ndarray, EncodeCache]:
    """Encode (B, n_beams) + (B, 3*n_px) [+ (B, 2)] into (B, n) states."""
    if (target_xy is not None) != net.multi_target:
        raise ContractViolation("target field presence does not match encoder mode")
    zl, cl = nn.forward_batch(net.lidar_net, np.asarray(lidar) / net.max_range)
    zc, cc = nn.forward_batch(net.camera_net, camera_flat)
    if net.multi_target:
        fused_in = np.concatenate([zl, zc, _normalize_target(net, np.asarray(target_xy))], axis=1)
    else:
        fused_in = np.concatenate([zl, zc], axis=1)
    s, cf = nn.forward_batch(net.fusion_net, fused_in)
    return s, EncodeCache(cl, cc, cf)


def encode(net: StateNet, obs) -> np.ndarray:
    """Single observation -> (n,) state vector."""
    tgt = None if obs.target_xy is None else np.asarray(obs.target_xy)[None, :]
    s, _ = encode_batch(
        net,
        np.asarray(obs.lidar)[None, :],
        np.asarray(obs.camera, dtype=np.float64).reshape(1, -1),
        tgt,
    )
    return s[0]


def backward_encode(
    net: StateNet, cache: EncodeCache, d_states: np.ndarray
) -> tuple[nn.GradientSet, nn.GradientSet, nn.GradientSet]:
    """Push (B, n) state-space gradients back to all three sub-networks."""
    gf, d_fused = nn.backward_batch(net.fusion_net, cache.fusion, d_states)
    gl, _ = nn.backward_batch(net.lidar_net, cache.lidar, d_fused[:, : net.n])
    gc, _ = nn.backward_batch(net.camera_net, cache.camera, d_fused[:, net.n : 2 * net.n])
    # the target slice of d_fused is an input, not a parameter: dropped
    return gl, gc, gf


# -- prior losses ----------------------------------------------------------
#
# Each loss takes the encoded batch (s, s_next are (U, n) arrays over the
# unique referenced transitions) plus row indices into them, and returns
# (value, d_s, d_s_next).  Gradients accumulate with np.add.at because rows
# repeat across pairs.


def loss_temporal(s: np.ndarray, s_next: np.ndarray, rows: np.ndarray):
    if len(rows) == 0:
        raise ContractViolation("temporal loss needs a non-empty batch")
    ds = s_next[rows] - s[rows]
    value = float(np.mean(np.sum(ds * ds, axis=1)))
    g = 2.0 * ds / len(rows)
    d_s = np.zeros_like(s)
    d_sn = np.zeros_like(s_next)
    np.add.at(d_sn, rows, g)
    np.add.at(d_s, rows, -g)
    return value, d_s, d_sn


def loss_proportionality(s: np.ndarray, s_next: np.ndarray, pairs: np.ndarray):
    d_s = np.zeros_like(s)
    d_sn = np.zeros_like(s_next)
    if len(pairs) == 0:
        return 0.0, d_s, d_sn
    t1, t2 = pairs[:, 0], pairs[:, 1]
    ds1 = s_next[t1] - s[t1]
    ds2 = s_next[t2] - s[t2]
    n1 = np.sqrt(np.sum(ds1 * ds1, axis=1))
    n2 = np.sqrt(np.sum(ds2 * ds2, axis=1))
    diff = n2 - n1
    value = float(np.mean(diff * diff))
    k = len(pairs)
    # safe norms only inside the gradient: d||v||/dv = v / sqrt(||v||^2 + eps)
    inv1 = 1.0 / np.sqrt(np.sum(ds1 * ds1, axis=1) + EPS_NORM)
    inv2 = 1.0 / np.sqrt(np.sum(ds2 * ds2, axis=1) + EPS_NORM)
    g2 = (2.0 * diff * inv2 / k)[:, None] * ds2
    g1 = (-2.0 * diff * inv1 / k)[:, None] * ds1
    np.add.at(d_sn, t2, g2)
    np.add.at(d_s, t2, -g2)
    np.add.at(d_sn, t1, g1)
    np.add.at(d_s, t1, -g1)
    return value, d_s, d_sn


def loss_causality(s: np.ndarray, s_next: np.ndarray, pairs: np.ndarray):
    d_s = np.zeros_like(s)
    d_sn = np.zeros_like(s_next)
    if len(pairs) == 0:
        return 0.0, d_s, d_sn
    t1, t2 = pairs[:, 0], pairs[:, 1]
    diff = s[t2] - s[t1]
    e = np.exp(-np.sum(diff * diff, axis=1))
    value = float(np.mean(e))
    g = (-2.0 * e / len(pairs))[:, None] * diff
    np.add.at(d_s, t2, g)
    np.add.at(d_s, t1, -g)
    return value, d_s, d_sn


def loss_repeatability(s: np.ndarray, s_next: np.ndarray, pairs: np.ndarray):
    d_s = np.zeros_like(s)
    d_sn = np.zeros_like(s_next)
    if len(pairs) == 0:
        return 0.0, d_s, d_sn
    t1, t2 = pairs[:, 0], pairs[:, 1]
    diff = s[t2] - s[t1]
    dd = (s_next[t2] - s[t2]) - (s_next[t1] - s[t1])
    e = np.exp(-np.sum(diff * diff, axis=1))
    ddsq = np.sum(dd * dd, axis=1)
    value = float(np.mean(e * ddsq))
    k = len(pairs)
    g_diff = (-2.0 * e * ddsq / k)[:, None] * diff  # through the exp factor
    g_dd = (2.0 * e / k)[:, None] * dd  # through the quadratic factor
    np.add.at(d_s, t2, g_diff)
    np.add.at(d_s, t1, -g_diff)
    np.add.at(d_sn, t2, g_dd)
    np.add.at(d_s, t2, -g_dd)
    np.add.at(d_sn, t1, -g_dd)
    np.add.at(d_s, t1, g_dd)
    return value, d_s, d_sn


def _unique_rows(batch: PriorBatch):
    """Map buffer indices to compact row numbers shared by all losses."""
    all_idx = np.concatenate([batch.base, batch.prop_pairs.reshape(-1), batch.caus_pairs.reshape(-1)])
    uniq = np.unique(all_idx)
    base = np.searchsorted(uniq, batch.base)
    prop = np.searchsorted(uniq, batch.prop_pairs.reshape(-1)).reshape(-1, 2)
    caus = np.searchsorted(uniq, batch.caus_pairs.reshape(-1)).reshape(-1, 2)
    return uniq, base, prop, caus


def total_loss(
    net: StateNet, buffer: ReplayBuffer, batch: PriorBatch, weights: PriorWeights
) -> tuple[float, dict, tuple[nn.GradientSet, nn.GradientSet, nn.GradientSet]]:
    """Weighted prior losses plus L2 penalty, with gradients for all three nets.

    State-space gradients from every loss flow through both encoder passes
    (s_t and s_{t+1}) of every referenced transition.
    """
    uniq, base, prop, caus = _unique_rows(batch)
    s, cache_s = encode_batch(net, *buffer.obs_arrays(uniq))
    s_next, cache_n = encode_batch(net, *buffer.next_obs_arrays(uniq))

    l1, g1s, g1n = loss_temporal(s, s_next, base)
    l2, g2s, g2n = loss_proportionality(s, s_next, prop)
    l3, g3s, g3n = loss_causality(s, s_next, caus)
    l4, g4s, g4n = loss_repeatability(s, s_next, prop)
    w = weights
    d_s = w.w1 * g1s + w.w2 * g2s + w.w3 * g3s + w.w4 * g4s
    d_sn = w.w1 * g1n + w.w2 * g2n + w.w3 * g3n + w.w4 * g4n

    gl_s, gc_s, gf_s = backward_encode(net, cache_s, d_s)
    gl_n, gc_n, gf_n = backward_encode(net, cache_n, d_sn)
    grads = [
        nn.accumulate(a, b)
        for a, b in ((gl_s, gl_n), (gc_s, gc_n), (gf_s, gf_n))
    ]

    l_reg = 0.0
    for g, sub in zip(grads, net.networks()):
        value, g_pen = nn.l2_penalty(sub)
        l_reg += value
        nn.accumulate_(g, g_pen, w.w5)

    total = w.w1 * l1 + w.w2 * l2 + w.w3 * l3 + w.w4 * l4 + w.w5 * l_reg
    components = {
        "temporal": l1,
        "proportionality": l2,
        "causality": l3,
        "repeatability": l4,
        "l2_reg": l_reg,
        "total": total,
    }
    return total, components, tuple(grads)


# -- training --------------------------------------------------------------


@dataclass
class SrlConfig:
    n: int = 10
    hidden: int = 64
    epochs: int = 10
    k_base: int = 256
    k_pairs: int = 256
    delta_sim: float = 0.05
    delta_diff: float = 0.01
    # small Adam steps: at 1e-3 a single update walks every weight further
    # than its init scale, so the L2 term flattens the encoder into a
    # constant map before the priors can organize it
    learning_rate: float = 3e-5
    steps_per_epoch: int = 0  # 0: one pass over the buffer per epoch
    weights: PriorWeights = field(default_factory=PriorWeights)


@dataclass
class StateNetOptimizer:
    lidar: nn.OptimizerState
    camera: nn.OptimizerState
    fusion: nn.OptimizerState

    @classmethod
    def fresh(cls, learning_rate: float) -> "StateNetOptimizer":
        return cls(
            nn.OptimizerState(learning_rate),
            nn.OptimizerState(learning_rate),
            nn.OptimizerState(learning_rate),
        )

    def states(self):
        return (self.lidar, self.camera, self.fusion)


def train_statenet(
    net: StateNet,
    buffer: ReplayBuffer,
    cfg: SrlConfig,
    opt: StateNetOptimizer,
    rng: np.random.Generator,
) -> list[dict]:
    """Run cfg.epochs optimization epochs; returns one report row per epoch."""
    if len(buffer) == 0:
        raise ContractViolation("cannot train on an empty buffer")
    steps = cfg.steps_per_epoch or max(1, int(np.ceil(len(buffer) / cfg.k_base)))
    report = []
    for epoch in range(cfg.epochs):
        sums = None
        for _ in range(steps):
            batch = build_prior_batch(
                buffer, cfg.k_base, cfg.k_pairs, cfg.delta_sim, cfg.delta_diff, rng
            )
            _, comps, grads = total_loss(net, buffer, batch, cfg.weights)
            for sub, g, state in zip(net.networks(), grads, opt.states()):
                nn.optimizer_step(sub, g, state)
            if sums is None:
                sums = {k: 0.0 for k in comps}
            for k, v in comps.items():
                sums[k] += v
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        report.append(row)
    return report


SRL_REPORT_COLUMNS = ["epoch", "temporal", "proportionality", "causality", "repeatability", "l2_reg", "total"]


def write_srl_report(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(SRL_REPORT_COLUMNS) + "\n")
        for row in rows:
            vals = [str(row["epoch"])] + [repr(float(row[c])) for c in SRL_REPORT_COLUMNS[1:]]
            fh.write(",".join(vals) + "\n")


# -- checkpoints -----------------------------------------------------------


def statenet_to_dict(net: StateNet) -> dict:
    return {
        "format": STATENET_FORMAT,
        "n": net.n,
        "n_beams": net.n_beams,
        "n_px": net.n_px,
        "multi_target": net.multi_target,
        "max_range": net.max_range,
        "bounds": list(net.bounds),
        "lidar": nn.network_to_dict(net.lidar_net),
        "camera": nn.network_to_dict(net.camera_net),
        "fusion": nn.network_to_dict(net.fusion_net),
    }


def statenet_from_dict(d: dict) -> StateNet:
    if d.get("format") != STATENET_FORMAT:
        raise ContractViolation(f"unrecognized checkpoint format {d.get('format')!r}")
    return StateNet(
        lidar_net=nn.network_from_dict(d["lidar"]),
        camera_net=nn.network_from_dict(d["camera"]),
        fusion_net=nn.network_from_dict(d["fusion"]),
        n=int(d["n"]),
        n_beams=int(d["n_beams"]),
        n_px=int(d["n_px"]),
        multi_target=bool(d["multi_target"]),
        max_range=float(d["max_range"]),
        bounds=tuple(float(v) for v in d["bounds"]),
    )


def save_statenet(net: StateNet, path) -> None:
    with open(path, "w") as fh:
        json.dump(statenet_to_dict(net), fh)


def load_statenet(path) -> StateNet:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ContractViolation(f"corrupt checkpoint {path}: {e}") from e
    return statenet_from_dict(d)


def shaping_scale(reward_kind: str, eta1: float, eta2: float, bounds) -> float:
    """Worst-case magnitude of the non-terminal shaping reward in a room.

    Used to set the reward-similarity tolerance as a fixed fraction of the
    actual reward scale rather than an absolute number.
    """
    x0, y0, x1, y1 = bounds
    if reward_kind == "distance":
        d_max = float(np.hypot(x1 - x0, y1 - y0))
        return float(np.exp(eta1 * d_max) - 1.0)
    return float(np.exp(eta2 * np.pi) - 1.0)
