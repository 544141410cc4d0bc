"""Double DQN over learned, ground-truth, or raw-observation states.

The Q function is a plain dense network; the target copy is hard-synced every
fixed number of steps.  The bootstrap follows the double estimator: the online
net picks the argmax action at s', the target net prices it.  Timeouts are
treated as non-terminal for bootstrapping (the episode was cut, not ended by
the world), so done means reached or crashed.

State encoders make the input condition pluggable: the learned encoder, the
true pose vector, or the raw concatenated sensors.  The learned encoder keeps
a per-slot cache of encoded states, refreshed from scratch whenever its
underlying networks change, so no stale encodings survive an encoder update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, srl
from .env import NavEnv, Observation, Truth
from .errors import ContractViolation
from .replay import ReplayBuffer, Transition
from .seeding import RunStreams

N_ACTIONS = 3


@dataclass
class AgentConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.995  # multiplicative, per episode
    eps_hold: int = 20  # episodes of frozen epsilon after an encoder update
    target_sync: int = 500  # steps between hard target syncs
    batch_size: int = 64
    learning_rate: float = 1e-3
    warmup: int = 1000  # transitions before Q updates start
    buffer_capacity: int = 50_000
    hidden: int = 64  # two relu hidden layers of this width
    episodes: int = 600
    statenet_updates: list[int] = field(default_factory=lambda: [200, 400])
    eval_every: int = 50  # greedy evaluation cadence (episodes); 0 disables
    eval_episodes: int = 20
    crash_window: int = 50  # rolling crash-ratio window

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ContractViolation("gamma must be in [0, 1)")
        for e in (self.eps_start, self.eps_end):
            if not 0 <= e <= 1:
                raise ContractViolation("epsilon bounds must be in [0, 1]")
        if self.target_sync < 1:
            raise ContractViolation("target_sync must be >= 1")


def make_qnet(state_dim: int, hidden: int, rng: np.random.Generator) -> nn.Network:
    return nn.init_network(
        [state_dim, hidden, hidden, N_ACTIONS], ["relu", "relu", "identity"], rng
    )


def q_values(qnet: nn.Network, state: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(qnet, state)
    return out


def select_action(
    qnet: nn.Network, state: np.ndarray, eps: float, rng: np.random.Generator
) -> int:
    if not 0.0 <= eps <= 1.0:
        raise ContractViolation("epsilon out of [0, 1]")
    if eps > 0.0 and rng.uniform() < eps:
        return int(rng.integers(N_ACTIONS))
    # np.argmax takes the first maximum: ties break toward the lowest index
    return int(np.argmax(q_values(qnet, state)))


def td_loss_and_grads(
    qnet: nn.Network,
    target_net: nn.Network,
    states: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    next_states: np.ndarray,
    done: np.ndarray,
    gamma: float,
) -> tuple[float, nn.GradientSet]:
    """Mean squared TD error and its gradient w.r.t. the online net.

    The target y = r + gamma * Q'(s', argmax_a Q(s', a)) * (1 - done) is a
    constant for the gradient: no derivative flows through the bootstrap.
    """
    b = len(states)
    q_s, cache = nn.forward_batch(qnet, states)
    q_next_online, _ = nn.forward_batch(qnet, next_states)
    a_star = np.argmax(q_next_online, axis=1)
    q_next_target, _ = nn.forward_batch(target_net, next_states)
    bootstrap = q_next_target[np.arange(b), a_star]
    y = rewards + gamma * bootstrap * (~done)
    td = q_s[np.arange(b), actions] - y
    loss = float(np.mean(td * td))
    g = np.zeros_like(q_s)
    g[np.arange(b), actions] = 2.0 * td / b
    grads, _ = nn.backward_batch(qnet, cache, g)
    return loss, grads


def ddqn_update(
    qnet: nn.Network,
    target_net: nn.Network,
    states: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    next_states: np.ndarray,
    done: np.ndarray,
    gamma: float,
    opt: nn.OptimizerState,
) -> float:
    """One TD step on the online net; returns the batch TD loss."""
    loss, grads = td_loss_and_grads(
        qnet, target_net, states, actions, rewards, next_states, done, gamma
    )
    nn.optimizer_step(qnet, grads, opt)
    return loss


def sync_target(qnet: nn.Network, target_net: nn.Network) -> None:
    nn.copy_params_(target_net, qnet)


# -- state encoders --------------------------------------------------------


class TruthEncoder:
    """Feeds the normalized true (x, y, theta, d) vector; the sanity condition."""

    def __init__(self, bounds: tuple[float, float, float, float]):
        self.bounds = bounds
        x0, y0, x1, y1 = bounds
        self._diag = float(np.hypot(x1 - x0, y1 - y0))
        self.dim = 4

    def _transform(self, cols: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.bounds
        out = np.empty((len(cols), 4))
        out[:, 0] = (cols[:, 0] - x0) / (x1 - x0)
        out[:, 1] = (cols[:, 1] - y0) / (y1 - y0)
        out[:, 2] = cols[:, 2] / np.pi
        out[:, 3] = cols[:, 3] / self._diag
        return out

    def from_step(self, obs: Observation, truth: Truth) -> np.ndarray:
        row = np.array([[truth.pose.x, truth.pose.y, truth.pose.theta, truth.distance]])
        return self._transform(row)[0]

    def from_buffer(self, buffer: ReplayBuffer, idx: np.ndarray, next_state: bool) -> np.ndarray:
        cols = buffer.truth[idx] if next_state else buffer.truth_prev[idx]
        return self._transform(cols[:, :4])

    def on_push(self, buffer: ReplayBuffer, slot: int) -> None:
        pass

    def update(self, buffer: ReplayBuffer, episode: int) -> None:
        pass


class ObsEncoder:
    """Feeds raw concatenated sensors (scaled); the no-encoder baseline."""

    def __init__(self, n_beams: int, n_px: int, max_range: float,
                 multi_target: bool = False,
                 bounds: tuple[float, float, float, float] = (0.0, 0.0, 4.0, 4.0)):
        self.n_beams = n_beams
        self.n_px = n_px
        self.max_range = max_range
        self.multi_target = multi_target
        self.bounds = bounds
        self.dim = n_beams + 3 * n_px + (2 if multi_target else 0)

    def _target_norm(self, tgt: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.bounds
        return (tgt - (x0, y0)) / (x1 - x0, y1 - y0)

    def from_step(self, obs: Observation, truth: Truth) -> np.ndarray:
        parts = [np.asarray(obs.lidar) / self.max_range,
                 np.asarray(obs.camera, dtype=np.float64).reshape(-1)]
        if self.multi_target:
            parts.append(self._target_norm(np.asarray(obs.target_xy)))
        return np.concatenate(parts)

    def from_buffer(self, buffer: ReplayBuffer, idx: np.ndarray, next_state: bool) -> np.ndarray:
        lidar, camera, tgt = (
            buffer.next_obs_arrays(idx) if next_state else buffer.obs_arrays(idx)
        )
        parts = [lidar / self.max_range, camera]
        if self.multi_target:
            parts.append(self._target_norm(tgt))
        return np.concatenate(parts, axis=1)

    def on_push(self, buffer: ReplayBuffer, slot: int) -> None:
        pass

    def update(self, buffer: ReplayBuffer, episode: int) -> None:
        pass


class SrlEncoder:
    """Feeds the learned state; optionally retrains its networks on demand.

    Encodings of buffer rows are cached per slot and tagged with the encoder
    version; any parameter change forces a full re-encode, so Q updates never
    see encodings from a superseded encoder.
    """

    def __init__(self, statenet: srl.StateNet, srl_cfg: srl.SrlConfig | None = None,
                 opt: srl.StateNetOptimizer | None = None,
                 rng: np.random.Generator | None = None):
        self.net = statenet
        self.srl_cfg = srl_cfg
        self.opt = opt
        self.rng = rng
        self.dim = statenet.n
        self.update_count = 0
        self.training_reports: list[list[dict]] = []
        self._cache_s: np.ndarray | None = None
        self._cache_next: np.ndarray | None = None
        self._cache_version = -1

    def _version(self) -> int:
        return sum(sub.version for sub in self.net.networks())

    def from_step(self, obs: Observation, truth: Truth) -> np.ndarray:
        return srl.encode(self.net, obs)

    def _ensure_cache(self, buffer: ReplayBuffer) -> None:
        if self._cache_s is None:
            self._cache_s = np.zeros((buffer.capacity, self.dim))
            self._cache_next = np.zeros((buffer.capacity, self.dim))
            self._cache_version = self._version()

    def on_push(self, buffer: ReplayBuffer, slot: int) -> None:
        self._ensure_cache(buffer)
        rows = np.array([slot])
        s, _ = srl.encode_batch(self.net, *buffer.obs_arrays(rows))
        s2, _ = srl.encode_batch(self.net, *buffer.next_obs_arrays(rows))
        self._cache_s[slot] = s[0]
        self._cache_next[slot] = s2[0]

    def refresh_full(self, buffer: ReplayBuffer) -> None:
        self._ensure_cache(buffer)
        live = np.arange(len(buffer))
        if len(live):
            s, _ = srl.encode_batch(self.net, *buffer.obs_arrays(live))
            s2, _ = srl.encode_batch(self.net, *buffer.next_obs_arrays(live))
            self._cache_s[live] = s
            self._cache_next[live] = s2
        self._cache_version = self._version()

    def from_buffer(self, buffer: ReplayBuffer, idx: np.ndarray, next_state: bool) -> np.ndarray:
        if self._cache_s is None or self._cache_version != self._version():
            raise ContractViolation("encoder cache is stale; refresh_full was skipped")
        return (self._cache_next if next_state else self._cache_s)[idx]

    def update(self, buffer: ReplayBuffer, episode: int) -> None:
        if self.srl_cfg is None:
            return
        self.training_reports.append(
            srl.train_statenet(self.net, buffer, self.srl_cfg, self.opt, self.rng)
        )
        self.update_count += 1
        self.refresh_full(buffer)


# -- training loop ---------------------------------------------------------


TRAINING_LOG_COLUMNS = ["episode", "return", "steps", "terminal", "epsilon", "crash_ratio_window"]
EVAL_LOG_COLUMNS = ["episode", "success_rate", "crash_ratio", "mean_return"]


@dataclass
class TrainingResult:
    episodes: list[dict]  # TRAINING_LOG_COLUMNS rows
    evals: list[dict]  # EVAL_LOG_COLUMNS rows
    buffer: ReplayBuffer
    qnet: nn.Network
    target_net: nn.Network


def run_training(
    env: NavEnv,
    encoder,
    qnet: nn.Network,
    cfg: AgentConfig,
    streams: RunStreams,
) -> TrainingResult:
    """Standard DDQN loop with optional staggered encoder retraining.

    At every episode index in cfg.statenet_updates the encoder gets an
    update() call (a no-op for the fixed conditions) and epsilon is held
    constant for cfg.eps_hold episodes so the policy can re-settle on the new
    representation before exploration keeps annealing.
    """
    buffer = ReplayBuffer(cfg.buffer_capacity)
    target_net = nn.clone_network(qnet)
    opt = nn.OptimizerState(cfg.learning_rate)
    eps = cfg.eps_start
    hold_until = -1
    total_steps = 0
    episode_rows: list[dict] = []
    eval_rows: list[dict] = []
    recent_terminals: list[str] = []

    for episode in range(cfg.episodes):
        if episode in cfg.statenet_updates:
            encoder.update(buffer, episode)
            hold_until = episode + cfg.eps_hold
        obs = env.reset(streams.env)
        truth = env.current_truth()
        ep_return = 0.0
        discount = 1.0
        steps = 0
        while True:
            state = encoder.from_step(obs, truth)
            action = select_action(qnet, state, eps, streams.explore)
            result = env.step(action)
            buffer.push(
                Transition(obs, action, result.reward, result.observation,
                           result.terminal, result.truth, episode, steps, truth)
            )
            encoder.on_push(buffer, (buffer.cursor - 1) % buffer.capacity)
            ep_return += discount * result.reward
            discount *= cfg.gamma
            steps += 1
            total_steps += 1
            if len(buffer) >= cfg.warmup:
                idx = buffer.sample_indices(cfg.batch_size, streams.sample)
                done = (buffer.terminal[idx] == 1) | (buffer.terminal[idx] == 2)
                ddqn_update(
                    qnet, target_net,
                    encoder.from_buffer(buffer, idx, next_state=False),
                    buffer.action[idx].astype(np.int64),
                    buffer.reward[idx],
                    encoder.from_buffer(buffer, idx, next_state=True),
                    done, cfg.gamma, opt,
                )
            if total_steps % cfg.target_sync == 0:
                sync_target(qnet, target_net)
            obs = result.observation
            truth = result.truth
            if result.terminal != "none":
                break
        recent_terminals.append(result.terminal)
        window = recent_terminals[-cfg.crash_window:]
        crash_ratio = sum(t == "crashed" for t in window) / len(window)
        episode_rows.append(
            {"episode": episode, "return": ep_return, "steps": steps,
             "terminal": result.terminal, "epsilon": eps,
             "crash_ratio_window": crash_ratio}
        )
        if cfg.eval_every and (episode + 1) % cfg.eval_every == 0:
            success, crash, mean_ret = evaluate(
                env, encoder, qnet, cfg.eval_episodes, cfg.gamma, streams.eval
            )
            eval_rows.append(
                {"episode": episode + 1, "success_rate": success,
                 "crash_ratio": crash, "mean_return": mean_ret}
            )
        if episode >= hold_until:
            eps = max(cfg.eps_end, eps * cfg.eps_decay)
    return TrainingResult(episode_rows, eval_rows, buffer, qnet, target_net)


def evaluate(
    env: NavEnv,
    encoder,
    qnet: nn.Network,
    episodes: int,
    gamma: float,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """Greedy rollouts: (success rate, crash ratio, mean discounted return)."""
    successes = crashes = 0
    returns = []
    for _ in range(episodes):
        obs = env.reset(rng)
        truth = env.current_truth()
        ep_return = 0.0
        discount = 1.0
        while True:
            action = select_action(qnet, encoder.from_step(obs, truth), 0.0, rng)
            result = env.step(action)
            ep_return += discount * result.reward
            discount *= gamma
            obs = result.observation
            truth = result.truth
            if result.terminal != "none":
                break
        successes += result.terminal == "reached"
        crashes += result.terminal == "crashed"
        returns.append(ep_return)
    k = max(episodes, 1)
    return successes / k, crashes / k, float(np.mean(returns)) if returns else 0.0


# -- log export ------------------------------------------------------------


def write_training_log(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(TRAINING_LOG_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                f'{r["episode"]},{float(r["return"])!r},{r["steps"]},'
                f'{r["terminal"]},{float(r["epsilon"])!r},{float(r["crash_ratio_window"])!r}\n'
            )


def write_eval_log(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(EVAL_LOG_COLUMNS) + "\n")
        for r in rows:
            fh.write(
                f'{r["episode"]},{float(r["success_rate"])!r},'
                f'{float(r["crash_ratio"])!r},{float(r["mean_return"])!r}\n'
            )
