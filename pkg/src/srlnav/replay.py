"""Replay storage and prior-pair construction.

The buffer is a fixed-capacity ring with columnar numpy storage so that batch
assembly for training is pure fancy indexing.  Each stored step carries both
its observation and the successor observation, so state-change terms never
cross an episode boundary by construction.  Reward changes do need the next
logged step: a transition is "prop-eligible" only while its same-episode
successor is still resident in the buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import Observation, Pose, Truth
from .errors import ContractViolation

TERMINAL_CODES = {"none": 0, "reached": 1, "crashed": 2, "timeout": 3}
TERMINAL_NAMES = {v: k for k, v in TERMINAL_CODES.items()}

PAIR_ATTEMPT_FACTOR = 50  # rejection-sampling budget = factor * k_pairs


@dataclass
class Transition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    terminal: str
    truth: Truth  # pose/distance after the step (matches next_obs)
    episode_id: int
    step_idx: int
    prev_truth: Truth | None = None  # pose/distance before the step (matches obs)


@dataclass
class PriorBatch:
    base: np.ndarray  # (B,) buffer indices for the temporal-coherence term
    prop_pairs: np.ndarray  # (P, 2) index pairs with similar |reward change|
    caus_pairs: np.ndarray  # (C, 2) index pairs with dissimilar rewards


class ReplayBuffer:
    """FIFO ring buffer; storage is allocated on the first push."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ContractViolation("capacity must be positive")
        self.capacity = capacity
        self.size = 0
        self.cursor = 0
        self._allocated = False
        # (episode, step) -> slot, kept in sync with evictions so successor
        # lookups stay O(1)
        self._key_to_idx: dict[tuple[int, int], int] = {}

    def __len__(self) -> int:
        return self.size

    def _allocate(self, tr: Transition) -> None:
        c = self.capacity
        self.n_beams = len(tr.obs.lidar)
        self.n_px = len(tr.obs.camera)
        self.multi_target = tr.obs.target_xy is not None
        self.lidar = np.zeros((c, self.n_beams))
        self.camera = np.zeros((c, 3 * self.n_px))
        self.next_lidar = np.zeros((c, self.n_beams))
        self.next_camera = np.zeros((c, 3 * self.n_px))
        self.target_xy = np.zeros((c, 2)) if self.multi_target else None
        self.action = np.zeros(c, dtype=np.int8)
        self.reward = np.zeros(c)
        self.terminal = np.zeros(c, dtype=np.int8)
        self.episode = np.zeros(c, dtype=np.int64)
        self.step_idx = np.zeros(c, dtype=np.int64)
        self.truth = np.zeros((c, 5))  # x, y, theta, distance, target_id
        self.truth_prev = np.zeros((c, 5))  # same fields, before the step
        self.succ = np.full(c, -1, dtype=np.int64)
        self._allocated = True

    def push(self, tr: Transition) -> None:
        if not self._allocated:
            self._allocate(tr)
        if (len(tr.obs.lidar) != self.n_beams or len(tr.obs.camera) != self.n_px
                or (tr.obs.target_xy is not None) != self.multi_target):
            raise ContractViolation("transition shape does not match buffer")
        if tr.terminal not in TERMINAL_CODES:
            raise ContractViolation(f"unknown terminal kind {tr.terminal!r}")
        c = self.cursor
        if self.size == self.capacity:
            # evict: drop the old key and cut any successor link pointing here
            old_key = (int(self.episode[c]), int(self.step_idx[c]))
            self._key_to_idx.pop(old_key, None)
            pred = self._key_to_idx.get((old_key[0], old_key[1] - 1))
            if pred is not None:
                self.succ[pred] = -1
        self.lidar[c] = tr.obs.lidar
        self.camera[c] = np.asarray(tr.obs.camera, dtype=np.float64).reshape(-1)
        self.next_lidar[c] = tr.next_obs.lidar
        self.next_camera[c] = np.asarray(tr.next_obs.camera, dtype=np.float64).reshape(-1)
        if self.multi_target:
            self.target_xy[c] = tr.obs.target_xy
        self.action[c] = tr.action
        self.reward[c] = tr.reward
        self.terminal[c] = TERMINAL_CODES[tr.terminal]
        self.episode[c] = tr.episode_id
        self.step_idx[c] = tr.step_idx
        self.truth[c] = (
            tr.truth.pose.x,
            tr.truth.pose.y,
            tr.truth.pose.theta,
            tr.truth.distance,
            tr.truth.target_id,
        )
        pt = tr.prev_truth if tr.prev_truth is not None else tr.truth
        self.truth_prev[c] = (pt.pose.x, pt.pose.y, pt.pose.theta, pt.distance, pt.target_id)
        key = (tr.episode_id, tr.step_idx)
        self._key_to_idx[key] = c
        self.succ[c] = self._key_to_idx.get((tr.episode_id, tr.step_idx + 1), -1)
        pred = self._key_to_idx.get((tr.episode_id, tr.step_idx - 1))
        if pred is not None:
            self.succ[pred] = c
        self.cursor = (c + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, i: int) -> Transition:
        if not 0 <= i < self.size:
            raise ContractViolation(f"index {i} out of range for size {self.size}")
        tgt = tuple(self.target_xy[i]) if self.multi_target else None
        obs = Observation(self.lidar[i].copy(), self.camera[i].reshape(self.n_px, 3).copy(), tgt)
        nxt = Observation(
            self.next_lidar[i].copy(), self.next_camera[i].reshape(self.n_px, 3).copy(), tgt
        )
        x, y, theta, dist, tid = self.truth[i]
        px, py, ptheta, pdist, ptid = self.truth_prev[i]
        return Transition(
            obs,
            int(self.action[i]),
            float(self.reward[i]),
            nxt,
            TERMINAL_NAMES[int(self.terminal[i])],
            Truth(Pose(x, y, theta), dist, int(tid)),
            int(self.episode[i]),
            int(self.step_idx[i]),
            Truth(Pose(px, py, ptheta), pdist, int(ptid)),
        )

    def sample_indices(self, k: int, rng: np.random.Generator) -> np.ndarray:
        # draws are with replacement, so any non-empty buffer can serve any k
        if self.size < 1:
            raise ContractViolation("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=k)

    def sample_uniform(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """k uniform draws with replacement."""
        if self.size < 1:
            raise ContractViolation("cannot sample from an empty buffer")
        return [self.get(int(i)) for i in self.sample_indices(k, rng)]

    def prop_eligible(self) -> np.ndarray:
        """Indices whose same-episode successor is still in the buffer."""
        return np.nonzero(self.succ[: self.size] >= 0)[0]

    def delta_rewards(self, indices: np.ndarray) -> np.ndarray:
        """r_{t+1} - r_t for prop-eligible indices."""
        succ = self.succ[indices]
        if np.any(succ < 0):
            raise ContractViolation("delta_rewards on a transition without successor")
        return self.reward[succ] - self.reward[indices]

    # batch assembly helpers -------------------------------------------------

    def obs_arrays(self, indices: np.ndarray):
        tgt = self.target_xy[indices] if self.multi_target else None
        return self.lidar[indices], self.camera[indices], tgt

    def next_obs_arrays(self, indices: np.ndarray):
        tgt = self.target_xy[indices] if self.multi_target else None
        return self.next_lidar[indices], self.next_camera[indices], tgt


def build_prior_batch(
    buffer: ReplayBuffer,
    k_base: int,
    k_pairs: int,
    delta_sim: float,
    delta_diff: float,
    rng: np.random.Generator,
) -> PriorBatch:
    """Draw loss-condition index sets by bounded rejection sampling.

    prop pairs need | |dr_t2| - |dr_t1| | <= delta_sim, caus pairs need
    |r_t2 - r_t1| > delta_diff.  Fewer than k_pairs pairs come back when the
    attempt budget (PAIR_ATTEMPT_FACTOR * k_pairs) runs dry.
    """
    if len(buffer) == 0:
        raise ContractViolation("cannot build a prior batch from an empty buffer")
    base = buffer.sample_indices(k_base, rng)

    budget = PAIR_ATTEMPT_FACTOR * k_pairs
    elig = buffer.prop_eligible()
    if len(elig) >= 2:
        draws = elig[rng.integers(0, len(elig), size=(budget, 2))]
        dr = np.abs(buffer.delta_rewards(draws.reshape(-1)).reshape(budget, 2))
        ok = (np.abs(dr[:, 0] - dr[:, 1]) <= delta_sim) & (draws[:, 0] != draws[:, 1])
        prop_pairs = draws[ok][:k_pairs]
    else:
        rng.integers(0, 1, size=(budget, 2))  # burn the draw for determinism
        prop_pairs = np.zeros((0, 2), dtype=np.int64)

    draws = rng.integers(0, len(buffer), size=(budget, 2))
    r = buffer.reward[draws]
    ok = (np.abs(r[:, 0] - r[:, 1]) > delta_diff) & (draws[:, 0] != draws[:, 1])
    caus_pairs = draws[ok][:k_pairs]
    return PriorBatch(base, prop_pairs, caus_pairs)


# -- snapshots -------------------------------------------------------------


def snapshot_header(buffer: ReplayBuffer) -> list[str]:
    cols = ["episode", "step", "action", "reward", "terminal"]
    cols += ["truth_x", "truth_y", "truth_theta", "truth_distance", "truth_target"]
    cols += ["prev_x", "prev_y", "prev_theta", "prev_distance", "prev_target"]
    cols += [f"lidar_{i}" for i in range(buffer.n_beams)]
    cols += [f"cam_{i}" for i in range(3 * buffer.n_px)]
    cols += [f"next_lidar_{i}" for i in range(buffer.n_beams)]
    cols += [f"next_cam_{i}" for i in range(3 * buffer.n_px)]
    if buffer.multi_target:
        cols += ["target_x", "target_y"]
    return cols


def export_csv(buffer: ReplayBuffer, path) -> None:
    """Write the buffer oldest-first; floats via repr so reload is exact."""
    if not buffer._allocated:
        raise ContractViolation("cannot export an empty buffer")
    start = buffer.cursor if buffer.size == buffer.capacity else 0
    order = [(start + i) % buffer.capacity for i in range(buffer.size)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(snapshot_header(buffer)) + "\n")
        for i in order:
            vals = [
                str(int(buffer.episode[i])),
                str(int(buffer.step_idx[i])),
                str(int(buffer.action[i])),
                repr(float(buffer.reward[i])),
                TERMINAL_NAMES[int(buffer.terminal[i])],
            ]
            vals += [repr(float(v)) for v in buffer.truth[i]]
            vals += [repr(float(v)) for v in buffer.truth_prev[i]]
            vals += [repr(float(v)) for v in buffer.lidar[i]]
            vals += [repr(float(v)) for v in buffer.camera[i]]
            vals += [repr(float(v)) for v in buffer.next_lidar[i]]
            vals += [repr(float(v)) for v in buffer.next_camera[i]]
            if buffer.multi_target:
                vals += [repr(float(v)) for v in buffer.target_xy[i]]
            fh.write(",".join(vals) + "\n")


def import_csv(path, capacity: int | None = None) -> ReplayBuffer:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n_beams = sum(1 for h in header if h.startswith("lidar_"))
        n_px = sum(1 for h in header if h.startswith("cam_")) // 3
        multi = "target_x" in header
        if n_beams == 0 or n_px == 0:
            raise ContractViolation(f"{path} is not a buffer snapshot")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    buf = ReplayBuffer(capacity if capacity is not None else max(len(rows), 1))
    nb, nc = n_beams, 3 * n_px
    for vals in rows:
        episode, step, action = int(vals[0]), int(vals[1]), int(vals[2])
        reward, terminal = float(vals[3]), vals[4]
        truth = [float(v) for v in vals[5:10]]
        prev = [float(v) for v in vals[10:15]]
        k = 15
        lidar = np.array([float(v) for v in vals[k : k + nb]])
        cam = np.array([float(v) for v in vals[k + nb : k + nb + nc]]).reshape(n_px, 3)
        nlidar = np.array([float(v) for v in vals[k + nb + nc : k + 2 * nb + nc]])
        ncam = np.array(
            [float(v) for v in vals[k + 2 * nb + nc : k + 2 * nb + 2 * nc]]
        ).reshape(n_px, 3)
        tgt = (float(vals[-2]), float(vals[-1])) if multi else None
        buf.push(
            Transition(
                Observation(lidar, cam, tgt),
                action,
                reward,
                Observation(nlidar, ncam, tgt),
                terminal,
                Truth(Pose(truth[0], truth[1], truth[2]), truth[3], int(truth[4])),
                episode,
                step,
                Truth(Pose(prev[0], prev[1], prev[2]), prev[3], int(prev[4])),
            )
        )
    return buf
