"""Soft actor-critic adapted to the tree-structured episodes.

A separation produces up to two successor streams, so the bootstrap target
sums the soft values of both branches, each clamped below at zero: a stream
whose best soft Q-value is negative would simply be declined. Whether to
separate at all is decided from the sign of the (min-twin) Q-value.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, NamedTuple

import numpy as np

from . import approx
from .approx import NetParams, adam_scalar, adam_step, forward, gradient, init_network, init_optimizer
from .flowsheet import export_flowsheet, parse_flowsheet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class AgentConfig:
    gamma: float = 1.0
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 128
    replay_capacity: int = 100_000
    warmup_steps: int = 500
    forced_separate_prob: float = 0.05
    alpha_init: float = 0.2
    auto_alpha: bool = True
    target_entropy: float = -4.0
    updates_per_step: int = 1
    hidden_sizes: tuple = (128, 128)

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        bad = []
        if not 0 < self.gamma <= 1:
            bad.append("gamma")
        if not 0 < self.tau <= 1:
            bad.append("tau")
        for name in ("lr", "batch_size", "replay_capacity", "alpha_init", "updates_per_step"):
            if not getattr(self, name) > 0:
                bad.append(name)
        if self.warmup_steps < 0:
            bad.append("warmup_steps")
        if not 0 <= self.forced_separate_prob <= 1:
            bad.append("forced_separate_prob")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            bad.append("hidden_sizes")
        if bad:
            raise ValueError(f"invalid agent config: {', '.join(bad)}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden_sizes"] = list(self.hidden_sizes)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown agent key(s): {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class TreeTransition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    tops_next: np.ndarray | None  # None marks a terminal branch
    bottoms_next: np.ndarray | None


@dataclass
class Decision:
    separate: bool
    action: np.ndarray
    q_value: float
    forced: bool = False


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    tops: np.ndarray
    tops_present: np.ndarray
    bottoms: np.ndarray
    bottoms_present: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring of tree transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, obs_size: int, action_size: int, seed=None):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, obs_size))
        self.actions = np.zeros((self.capacity, action_size))
        self.rewards = np.zeros(self.capacity)
        self.tops = np.zeros((self.capacity, obs_size))
        self.tops_present = np.zeros(self.capacity, dtype=bool)
        self.bottoms = np.zeros((self.capacity, obs_size))
        self.bottoms_present = np.zeros(self.capacity, dtype=bool)
        self.ptr = 0
        self.size = 0
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def push(self, tr: TreeTransition) -> None:
        i = self.ptr
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.tops_present[i] = tr.tops_next is not None
        self.tops[i] = 0.0 if tr.tops_next is None else tr.tops_next
        self.bottoms_present[i] = tr.bottoms_next is not None
        self.bottoms[i] = 0.0 if tr.bottoms_next is None else tr.bottoms_next
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _oldest_first(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self.ptr) % self.capacity

    def get(self, index: int) -> TreeTransition:
        """Transition by age (0 = oldest still stored)."""
        i = self._oldest_first()[index]
        return TreeTransition(
            self.states[i].copy(),
            self.actions[i].copy(),
            float(self.rewards[i]),
            self.tops[i].copy() if self.tops_present[i] else None,
            self.bottoms[i].copy() if self.bottoms_present[i] else None,
        )

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self.size < batch_size:
            raise RuntimeError(f"buffer holds {self.size} transitions, need {batch_size}")
        return self.rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int) -> Batch:
        idx = self.sample_indices(batch_size)
        return Batch(
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.tops[idx],
            self.tops_present[idx],
            self.bottoms[idx],
            self.bottoms_present[idx],
        )

    def state_dict(self) -> dict:
        n = self.size
        return {
            "replay_states": self.states[:n],
            "replay_actions": self.actions[:n],
            "replay_rewards": self.rewards[:n],
            "replay_tops": self.tops[:n],
            "replay_tops_present": self.tops_present[:n],
            "replay_bottoms": self.bottoms[:n],
            "replay_bottoms_present": self.bottoms_present[:n],
        }

    def load_state_dict(self, data, ptr: int, rng_state: dict) -> None:
        n = len(data["replay_rewards"])
        self.states[:n] = data["replay_states"]
        self.actions[:n] = data["replay_actions"]
        self.rewards[:n] = data["replay_rewards"]
        self.tops[:n] = data["replay_tops"]
        self.tops_present[:n] = data["replay_tops_present"]
        self.bottoms[:n] = data["replay_bottoms"]
        self.bottoms_present[:n] = data["replay_bottoms_present"]
        self.size = n
        self.ptr = ptr
        self.rng.bit_generator.state = rng_state


def batch_from_transitions(transitions) -> Batch:
    obs_size = len(transitions[0].state)
    zeros = np.zeros(obs_size)
    return Batch(
        np.array([t.state for t in transitions], dtype=float),
        np.array([t.action for t in transitions], dtype=float),
        np.array([t.reward for t in transitions], dtype=float),
        np.array([zeros if t.tops_next is None else t.tops_next for t in transitions], dtype=float),
        np.array([t.tops_next is not None for t in transitions]),
        np.array([zeros if t.bottoms_next is None else t.bottoms_next for t in transitions], dtype=float),
        np.array([t.bottoms_next is not None for t in transitions]),
    )


class SACAgent:
    """Twin soft critics with targets, a squashed-Gaussian actor and a learned temperature."""

    def __init__(self, obs_size: int, action_size: int, config: AgentConfig | None = None, seed=None, value_weights=None):
        self.config = config or AgentConfig()
        # With ``value_weights`` the critic head is U(s) * tanh(net), where
        # U(s) = obs[:k] @ value_weights bounds the return reachable from the
        # stream. With gamma = 1 the two-branch backup does not contract, and
        # an unbounded head lets the positive bias of max(0, .) pile up.
        self.value_weights = None if value_weights is None else np.asarray(value_weights, dtype=float)
        self.obs_size = obs_size
        self.action_size = action_size
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_seq, noise_seq = seq.spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(noise_seq)
        hidden = list(self.config.hidden_sizes)
        lr = self.config.lr
        self.actor = init_network([obs_size, *hidden, 2 * action_size], init_rng)
        self.critics = [init_network([obs_size + action_size, *hidden, 1], init_rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.actor_opt = init_optimizer(self.actor, lr)
        self.critic_opts = [init_optimizer(c, lr) for c in self.critics]
        self.log_alpha = math.log(self.config.alpha_init)
        self.alpha_opt = {"m": 0.0, "v": 0.0, "t": 0, "lr": lr}
        self.decisions = 0  # explore-mode decisions, drives the warmup phase
        self.nonfinite = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    # -- evaluation helpers -------------------------------------------------

    def policy_head(self, states):
        out, cache = forward(self.actor, states)
        mean = out[..., : self.action_size]
        raw_log_std = out[..., self.action_size :]
        return mean, raw_log_std, cache

    def sample_policy(self, states, noise=None):
        mean, raw_log_std, _ = self.policy_head(states)
        if noise is None:
            noise = self.rng.standard_normal(mean.shape)
        return approx.sample_squashed_gaussian(mean, raw_log_std, noise)

    def value_scale(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if self.value_weights is None:
            return np.ones(states.shape[:-1])
        return states[..., : len(self.value_weights)] @ self.value_weights

    def critic_head(self, raw, states):
        """Critic value and its derivative with respect to the raw network output."""
        if self.value_weights is None:
            return raw, np.ones_like(raw)
        scale = self.value_scale(states)
        t = np.tanh(raw)
        return scale * t, scale * (1.0 - t * t)

    def min_q(self, nets, states, actions) -> np.ndarray:
        sa = np.concatenate([states, actions], axis=-1)
        q1, _ = forward(nets[0], sa)
        q2, _ = forward(nets[1], sa)
        return self.critic_head(np.minimum(q1, q2)[..., 0], states)[0]

    def select_action(self, obs, mode: str = "explore") -> Decision:
        obs = np.asarray(obs, dtype=float)
        if mode == "evaluate":
            mean, _, _ = self.policy_head(obs)
            action = np.tanh(mean)
            q = float(self.min_q(self.critics, obs, action))
            return Decision(q >= 0.0, action, q)
        if mode != "explore":
            raise ValueError(f"mode must be 'explore' or 'evaluate', got {mode!r}")
        warm = self.decisions < self.config.warmup_steps
        self.decisions += 1
        if warm:
            action = self.rng.uniform(-1.0, 1.0, self.action_size)
            q = float(self.min_q(self.critics, obs, action))
            return Decision(True, action, q, forced=True)
        action, _ = self.sample_policy(obs)
        q = float(self.min_q(self.critics, obs, action))
        coin = self.rng.random()
        if q >= 0.0:
            return Decision(True, action, q)
        if coin < self.config.forced_separate_prob:
            return Decision(True, action, q, forced=True)
        return Decision(False, action, q)

    # -- learning ------------------------------------------------------------

    def compute_target(self, batch: Batch, alpha=None, gamma=None) -> np.ndarray:
        alpha = self.alpha if alpha is None else alpha
        gamma = self.config.gamma if gamma is None else gamma
        n = len(batch)
        nxt = np.concatenate([batch.tops, batch.bottoms])
        present = np.concatenate([batch.tops_present, batch.bottoms_present])
        value = np.zeros(2 * n)
        if present.any():
            s = nxt[present]
            a, logp = self.sample_policy(s)
            soft = self.min_q(self.targets, s, a) - alpha * logp
            value[present] = np.maximum(0.0, soft)
        return batch.rewards + gamma * (value[:n] + value[n:])

    def update_critics(self, batch: Batch, targets) -> float:
        sa = np.concatenate([batch.states, batch.actions], axis=1)
        n = len(batch)
        losses = []
        new_params = []
        for net in self.critics:
            raw, cache = forward(net, sa)
            q, dq = self.critic_head(raw[:, 0], batch.states)
            diff = q - targets
            losses.append(0.5 * float(np.mean(diff**2)))
            grads, _ = gradient(net, cache, (diff * dq / n)[:, None])
            new_params.append(grads)
        loss = 0.5 * (losses[0] + losses[1])
        if not math.isfinite(loss):
            self.nonfinite += 1
            log.warning("non-finite critic loss; update skipped")
            return loss
        for k in range(2):
            self.critics[k], self.critic_opts[k] = adam_step(self.critics[k], new_params[k], self.critic_opts[k])
        return loss

    def _twin_q_and_action_grad(self, states, actions):
        sa = np.concatenate([states, actions], axis=1)
        q1, c1 = forward(self.critics[0], sa)
        q2, c2 = forward(self.critics[1], sa)
        # the head is monotone, so the smaller raw output gives the smaller value
        first = q1[:, 0] <= q2[:, 0]
        q, dq = self.critic_head(np.where(first, q1[:, 0], q2[:, 0]), states)
        _, g1 = gradient(self.critics[0], c1, (first * dq)[:, None], need_params=False)
        _, g2 = gradient(self.critics[1], c2, (~first * dq)[:, None], need_params=False)
        return q, (g1 + g2)[:, self.obs_size :]

    def update_actor(self, batch: Batch, q_fn: Callable | None = None, alpha=None) -> float:
        """One reparameterized policy step; ``q_fn(states, actions) -> (q, dq/da)`` overrides the critics."""
        alpha = self.alpha if alpha is None else alpha
        states = batch.states
        n = len(states)
        mean, raw_log_std, cache = self.policy_head(states)
        log_std = np.clip(raw_log_std, approx.LOG_STD_MIN, approx.LOG_STD_MAX)
        std = np.exp(log_std)
        noise = self.rng.standard_normal(mean.shape)
        action, logp = approx.sample_squashed_gaussian(mean, raw_log_std, noise)
        q, dq_da = (q_fn or self._twin_q_and_action_grad)(states, action)
        loss = float(np.mean(alpha * logp - q))
        if not math.isfinite(loss):
            self.nonfinite += 1
            log.warning("non-finite actor loss; update skipped")
            return loss
        one_minus = 1.0 - action**2
        d_u = (alpha * 2.0 * action * one_minus / (one_minus + approx.SQUASH_EPS) - dq_da * one_minus) / n
        d_log_std = (d_u * std * noise - alpha / n) * (raw_log_std == log_std)
        grads, _ = gradient(self.actor, cache, np.concatenate([d_u, d_log_std], axis=1))
        self.actor, self.actor_opt = adam_step(self.actor, grads, self.actor_opt)
        self._last_logp = logp
        return loss

    def update_temperature(self, batch: Batch, logp=None) -> float:
        if not self.config.auto_alpha:
            return self.alpha
        if logp is None:
            _, logp = self.sample_policy(batch.states)
        grad = -float(np.mean(logp + self.config.target_entropy))
        self.log_alpha = adam_scalar(self.log_alpha, grad, self.alpha_opt)
        return self.alpha

    def update_targets(self) -> None:
        tau = self.config.tau
        self.targets = [approx.soft_update(t, c, tau) for t, c in zip(self.targets, self.critics)]

    def update(self, batch: Batch) -> dict:
        y = self.compute_target(batch)
        critic_loss = self.update_critics(batch, y)
        actor_loss = self.update_actor(batch)
        alpha = self.update_temperature(batch, getattr(self, "_last_logp", None))
        self.update_targets()
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "alpha": alpha}

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict:
        out = {}
        nets = {"actor": self.actor, "critic0": self.critics[0], "critic1": self.critics[1], "target0": self.targets[0], "target1": self.targets[1]}
        for name, net in nets.items():
            for k, arr in enumerate(net.arrays()):
                out[f"{name}/{k}"] = arr
        for name, opt in (("actor", self.actor_opt), ("critic0", self.critic_opts[0]), ("critic1", self.critic_opts[1])):
            for k, arr in enumerate(opt.m.arrays()):
                out[f"opt_{name}_m/{k}"] = arr
            for k, arr in enumerate(opt.v.arrays()):
                out[f"opt_{name}_v/{k}"] = arr
        return out

    def meta(self) -> dict:
        opts = {"actor": self.actor_opt, "critic0": self.critic_opts[0], "critic1": self.critic_opts[1]}
        return {
            "config": self.config.to_dict(),
            "obs_size": self.obs_size,
            "action_size": self.action_size,
            "value_weights": None if self.value_weights is None else self.value_weights.tolist(),
            "log_alpha": self.log_alpha,
            "alpha_opt": dict(self.alpha_opt),
            "decisions": self.decisions,
            "nonfinite": self.nonfinite,
            "optimizers": {k: {"step": o.step, "lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps, "skipped": o.skipped} for k, o in opts.items()},
            "rng": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state(cls, meta: dict, arrays) -> "SACAgent":
        agent = cls(meta["obs_size"], meta["action_size"], AgentConfig.from_dict(meta["config"]), seed=0, value_weights=meta.get("value_weights"))

        def net(name):
            n = len(agent.actor.arrays()) if name == "actor" else len(agent.critics[0].arrays())
            return NetParams.from_arrays([arrays[f"{name}/{k}"] for k in range(n)])

        agent.actor = net("actor")
        agent.critics = [net("critic0"), net("critic1")]
        agent.targets = [net("target0"), net("target1")]
        opts = []
        for name, params in (("actor", agent.actor), ("critic0", agent.critics[0]), ("critic1", agent.critics[1])):
            n = len(params.arrays())
            o = meta["optimizers"][name]
            m = NetParams.from_arrays([arrays[f"opt_{name}_m/{k}"] for k in range(n)])
            v = NetParams.from_arrays([arrays[f"opt_{name}_v/{k}"] for k in range(n)])
            opts.append(approx.OptimizerState(m, v, o["step"], o["lr"], o["beta1"], o["beta2"], o["eps"], o["skipped"]))
        agent.actor_opt, agent.critic_opts = opts[0], opts[1:]
        agent.log_alpha = meta["log_alpha"]
        agent.alpha_opt = dict(meta["alpha_opt"])
        agent.decisions = meta["decisions"]
        agent.nonfinite = meta["nonfinite"]
        agent.rng.bit_generator.state = meta["rng"]
        return agent


def branch_observation(branch):
    """Terminal branch markers become None; open branches pass through as arrays."""
    return branch if isinstance(branch, np.ndarray) else None


@dataclass
class RunSummary:
    episodes: int = 0
    steps: int = 0
    transitions: int = 0
    updates: int = 0
    skipped_updates: int = 0
    best_return: float = -math.inf
    best_episode: int = -1
    best_flowsheet: object = None


LOG_COLUMNS = (
    "episode",
    "steps",
    "columns_placed",
    "failures",
    "return",
    "revenue_usd_per_yr",
    "tac_usd_per_yr",
    "best_return_so_far",
    "alpha",
    "wall_ms",
)


class Trainer:
    """Owns an agent, its replay buffer and the run counters; resumable from checkpoints."""

    def __init__(self, env, config: AgentConfig | None = None, seed: int = 0):
        self.env = env
        self.config = config or AgentConfig()
        self.seed = seed
        agent_seq, replay_seq = np.random.SeedSequence(seed).spawn(2)
        self.agent = SACAgent(env.observation_size, env.action_size, self.config, agent_seq, getattr(env, "value_weights", None))
        self.buffer = ReplayBuffer(self.config.replay_capacity, env.observation_size, env.action_size, np.random.default_rng(replay_seq))
        self.summary = RunSummary()

    def run_episode(self, max_transitions: int | None = None) -> dict:
        env, agent, cfg = self.env, self.agent, self.config
        start = time.perf_counter()
        env.reset(seed=self.summary.episodes)
        steps = 0
        ep_return = 0.0
        while not env.done:
            if max_transitions is not None and self.summary.transitions >= max_transitions:
                break
            obs = env.observation()
            decision = agent.select_action(obs, "explore")
            steps += 1
            if not decision.separate:
                env.step_decline()
                continue
            outcome = env.step_separate(decision.action)
            ep_return += outcome.reward
            self.buffer.push(
                TreeTransition(obs, decision.action, outcome.reward, branch_observation(outcome.tops), branch_observation(outcome.bottoms))
            )
            self.summary.transitions += 1
            if len(self.buffer) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    before = agent.nonfinite
                    agent.update(self.buffer.sample(cfg.batch_size))
                    self.summary.updates += 1
                    self.summary.skipped_updates += agent.nonfinite - before
        # toy environments may carry no flowsheet
        fs = getattr(env, "flowsheet", None)
        episode = self.summary.episodes
        self.summary.episodes += 1
        self.summary.steps += steps
        if env.done and ep_return > self.summary.best_return:
            self.summary.best_return = ep_return
            self.summary.best_episode = episode
            self.summary.best_flowsheet = fs
        return {
            "episode": episode,
            "steps": steps,
            "columns_placed": getattr(env, "columns_placed", 0),
            "failures": getattr(env, "failures", 0),
            "return": ep_return,
            "revenue_usd_per_yr": fs.total_revenue if fs is not None else 0.0,
            "tac_usd_per_yr": fs.total_tac if fs is not None else 0.0,
            "best_return_so_far": self.summary.best_return,
            "alpha": agent.alpha,
            "wall_ms": 1000.0 * (time.perf_counter() - start),
        }

    def run(self, episodes: int, sinks=(), max_transitions: int | None = None) -> RunSummary:
        for _ in range(episodes):
            if max_transitions is not None and self.summary.transitions >= max_transitions:
                break
            row = self.run_episode(max_transitions)
            for sink in sinks:
                sink(row)
        return self.summary

    def save(self, path) -> None:
        s = self.summary
        meta = {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "agent": self.agent.meta(),
            "replay_ptr": self.buffer.ptr,
            "replay_rng": self.buffer.rng.bit_generator.state,
            "summary": {k: getattr(s, k) for k in ("episodes", "steps", "transitions", "updates", "skipped_updates", "best_return", "best_episode")},
            "best_flowsheet": export_flowsheet(s.best_flowsheet) if s.best_flowsheet is not None else None,
        }
        arrays = {**self.agent.state_dict(), **self.buffer.state_dict()}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path, env) -> "Trainer":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            arrays = {k: data[k] for k in data.files if k != "meta"}
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        am = meta["agent"]
        if am["obs_size"] != env.observation_size or am["action_size"] != env.action_size:
            raise ValueError(
                f"checkpoint expects observation size {am['obs_size']}, problem has {env.observation_size}"
            )
        trainer = cls.__new__(cls)
        trainer.env = env
        trainer.config = AgentConfig.from_dict(am["config"])
        trainer.seed = meta["seed"]
        trainer.agent = SACAgent.from_state(am, arrays)
        trainer.buffer = ReplayBuffer(trainer.config.replay_capacity, env.observation_size, env.action_size, 0)
        trainer.buffer.load_state_dict(arrays, meta["replay_ptr"], meta["replay_rng"])
        s = RunSummary(**meta["summary"])
        if meta["best_flowsheet"] is not None:
            s.best_flowsheet = parse_flowsheet(meta["best_flowsheet"])
        trainer.summary = s
        return trainer


def evaluate_episode(env, agent: SACAgent):
    """One deterministic episode with the actor mean and the Q-sign rule; returns the flowsheet."""
    env.reset(seed=0)
    while not env.done:
        decision = agent.select_action(env.observation(), "evaluate")
        if decision.separate:
            env.step_separate(decision.action)
        else:
            env.step_decline()
    return env.flowsheet


def train(env, config: AgentConfig | None = None, episodes: int = 0, seed: int = 0, sinks=(), max_transitions=None):
    """Run ``episodes`` training episodes; returns (summary, trainer)."""
    trainer = Trainer(env, config, seed)
    summary = trainer.run(episodes, sinks, max_transitions)
    return summary, trainer
