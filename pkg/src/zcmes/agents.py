"""Off-policy agents (SAC with a state-value network, TD3), replay buffer and training loop.

Agents act in the normalized box ``[-1, 1]^d``; :func:`to_box` maps that onto
the environment's per-dimension action bounds. Critics see the normalized
action.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .environment import ACTION_HIGH, ACTION_LOW, run_episode
from .neural import Adam, Mlp

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG2 = np.log(2.0)
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class TrainingError(RuntimeError):
    pass


class BufferStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class HyperParams:
    gamma: float = 0.99
    lr: float = 3e-4
    buffer_size: int = 100_000
    batch_size: int = 256
    learning_starts: int = 100
    train_freq: int = 1
    gradient_steps: int = 1
    tau: float = 0.005
    ent_coef: float = 0.05
    noise_type: str = "normal"
    noise_std: float = 0.1
    policy_delay: int = 2
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    net_arch: tuple = (256, 256)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "net_arch", tuple(int(w) for w in self.net_arch))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size > self.buffer_size:
            raise ValueError("batch_size must not exceed buffer_size")
        if self.batch_size < 1 or self.train_freq < 1 or self.policy_delay < 1 or self.gradient_steps < 1:
            raise ValueError("batch_size, train_freq, gradient_steps and policy_delay must be >= 1")
        if self.lr <= 0 or self.ent_coef < 0 or self.noise_std < 0:
            raise ValueError("lr must be > 0; ent_coef and noise_std >= 0")
        if self.noise_type not in ("normal", "none"):
            raise ValueError("noise_type must be 'normal' or 'none'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net_arch"] = list(self.net_arch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


def sac_published() -> HyperParams:
    """Tuned SAC values as published."""
    return HyperParams(gamma=0.96, lr=0.00122, buffer_size=100_000, batch_size=512, learning_starts=1000,
                       train_freq=1, tau=0.02, ent_coef=0.05, net_arch=(400, 300))


def td3_published() -> HyperParams:
    """Tuned TD3 values as published (learning starts not given; library default used)."""
    return HyperParams(gamma=0.90, lr=0.00148, buffer_size=100_000, batch_size=1024, learning_starts=100,
                       train_freq=1, tau=0.08, noise_type="normal", noise_std=0.5237, net_arch=(400, 300))


def desk(hp: HyperParams) -> HyperParams:
    """Shrink networks and batch so 20k steps fit a few CPU minutes."""
    return replace(hp, net_arch=(64, 64), batch_size=min(hp.batch_size, 128))


def default_hp(algo: str) -> HyperParams:
    """Untuned library-style defaults at desk scale."""
    if algo == "sac":
        return HyperParams(net_arch=(64, 64), batch_size=128)
    if algo == "td3":
        return HyperParams(net_arch=(64, 64), batch_size=128, noise_std=0.1)
    raise ValueError(f"unknown algo {algo!r}")


def preset(algo: str, name: str = "desk") -> HyperParams:
    """``published`` (published sizes), ``desk`` (published values, small nets) or ``default``."""
    if name == "default":
        return default_hp(algo)
    base = {"sac": sac_published, "td3": td3_published}[algo]()
    return desk(base) if name == "desk" else base


def to_box(t, low=ACTION_LOW, high=ACTION_HIGH):
    return low + (np.asarray(t) + 1.0) * 0.5 * (high - low)


def from_box(a, low=ACTION_LOW, high=ACTION_HIGH):
    return 2.0 * (np.asarray(a) - low) / (high - low) - 1.0


# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Ring buffer of ``(s, a, r, s', done)``; uniform sampling with replacement."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.d = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, s, a, r, s2, done) -> None:
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and np.isfinite(r) and np.all(np.isfinite(s2))):
            raise ValueError("transition contains non-finite values")
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = s, a, r, s2, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng) -> np.ndarray:
        if self.size < batch:
            raise BufferStateError(f"buffer holds {self.size} transitions, need {batch}")
        return rng.integers(0, self.size, batch)

    def sample(self, batch: int, rng):
        i = self.sample_indices(batch, rng)
        return self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i]


def buffer_push(buf: ReplayBuffer, s, a, r, s2, done) -> None:
    buf.push(s, a, r, s2, done)


def buffer_sample(buf: ReplayBuffer, batch: int, rng):
    return buf.sample(batch, rng)


# ---------------------------------------------------------------------------


def _log1m_tanh2(u):
    """``log(1 - tanh(u)^2)`` without cancellation."""
    return 2.0 * (LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def squashed_log_prob(u, mu, log_std, low=ACTION_LOW, high=ACTION_HIGH):
    """Log density in the box of ``to_box(tanh(u))`` with ``u ~ N(mu, exp(log_std))``."""
    std = np.exp(log_std)
    eps = (u - mu) / std
    gauss = -0.5 * eps**2 - log_std - _HALF_LOG_2PI
    return np.sum(gauss - _log1m_tanh2(u) - np.log(0.5 * (high - low)), axis=-1)


def _box(act_dim: int, box):
    """Action bounds: the dispatch box for 11-dim agents, ``[-1, 1]`` otherwise."""
    if box is not None:
        return np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    if act_dim == len(ACTION_LOW):
        return ACTION_LOW, ACTION_HIGH
    return -np.ones(act_dim), np.ones(act_dim)


class SacAgent:
    """Squashed-Gaussian actor, twin soft Q critics, state value and target value."""

    algo = "sac"

    def __init__(self, obs_dim: int, act_dim: int, hp: HyperParams, rng, box=None):
        self.hp, self.obs_dim, self.act_dim = hp, obs_dim, act_dim
        self.low, self.high = _box(act_dim, box)
        arch, act = hp.net_arch, hp.activation
        self.actor = Mlp.init((obs_dim, *arch, 2 * act_dim), act, rng)
        self.q1 = Mlp.init((obs_dim + act_dim, *arch, 1), act, rng)
        self.q2 = Mlp.init((obs_dim + act_dim, *arch, 1), act, rng)
        self.v = Mlp.init((obs_dim, *arch, 1), act, rng)
        self.v_targ = self.v.clone()
        self.opt = {n: Adam(getattr(self, n).params, hp.lr) for n in ("actor", "q1", "q2", "v")}
        self.n_updates = 0

    def _dist(self, s):
        out, tape = self.actor.forward(s)
        mu = out[..., : self.act_dim]
        raw_ls = out[..., self.act_dim:]
        ls = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
        return mu, ls, raw_ls, tape

    def act(self, s, rng=None, deterministic: bool = False):
        """Return ``(t, log_prob)`` with ``t`` in ``[-1, 1]^d``."""
        mu, ls, _, _ = self._dist(np.asarray(s, dtype=float))
        eps = np.zeros_like(mu) if deterministic else rng.standard_normal(mu.shape)
        u = mu + np.exp(ls) * eps
        return np.tanh(u), squashed_log_prob(u, mu, ls, self.low, self.high)

    def _q_both(self, s, t):
        x = np.concatenate([s, t], axis=-1)
        q1, tp1 = self.q1.forward(x)
        q2, tp2 = self.q2.forward(x)
        return q1[:, 0], q2[:, 0], tp1, tp2

    def critic_update(self, batch) -> float:
        s, t, r, s2, d = batch
        n = len(r)
        target = r + self.hp.gamma * (1.0 - d) * self.v_targ(s2)[:, 0]
        q1, q2, tp1, tp2 = self._q_both(s, t)
        loss = 0.0
        for net, q, tp, name in ((self.q1, q1, tp1, "q1"), (self.q2, q2, tp2, "q2")):
            err = q - target
            loss += 0.5 * float(np.mean(err**2))
            g, _ = net.backward(tp, (err / n)[:, None])
            self.opt[name].step(net.params, g)
        return loss / 2.0

    def value_actor_update(self, batch, rng):
        """Value regression to ``min Q - alpha log pi`` and the reparameterized actor step."""
        s = batch[0]
        n = len(s)
        alpha = self.hp.ent_coef
        mu, ls, raw_ls, a_tape = self._dist(s)
        std = np.exp(ls)
        eps = rng.standard_normal(mu.shape)
        u = mu + std * eps
        t = np.tanh(u)
        logp = squashed_log_prob(u, mu, ls, self.low, self.high)
        q1, q2, tp1, tp2 = self._q_both(s, t)
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)

        v_pred, v_tape = self.v.forward(s)
        v_err = v_pred[:, 0] - (qmin - alpha * logp)
        g, _ = self.v.backward(v_tape, (v_err / n)[:, None])
        self.opt["v"].step(self.v.params, g)
        v_loss = 0.5 * float(np.mean(v_err**2))

        # dQ/dt through whichever critic is the minimum (critic params untouched)
        _, dx1 = self.q1.backward(tp1, np.where(use1, 1.0, 0.0)[:, None])
        _, dx2 = self.q2.backward(tp2, np.where(use1, 0.0, 1.0)[:, None])
        q_t = (dx1 + dx2)[:, self.obs_dim:]
        common = alpha * 2.0 * t - q_t * (1.0 - t * t)
        d_mu = common / n
        d_ls = (-alpha + common * std * eps) / n
        d_ls = d_ls * ((raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX))
        g, _ = self.actor.backward(a_tape, np.concatenate([d_mu, d_ls], axis=-1))
        self.opt["actor"].step(self.actor.params, g)
        a_loss = float(np.mean(alpha * logp - qmin))

        self.v_targ.soft_update(self.v, self.hp.tau)
        return v_loss, a_loss, float(-np.mean(logp))

    def update(self, buf: ReplayBuffer, rng) -> dict:
        batch = buf.sample(self.hp.batch_size, rng)
        c = self.critic_update(batch)
        v, a, ent = self.value_actor_update(batch, rng)
        self.n_updates += 1
        return {"critic_loss": c, "value_loss": v, "actor_loss": a, "entropy": ent}

    def policy_nets(self) -> dict:
        return {"actor": self.actor}


class Td3Agent:
    """Deterministic tanh actor, twin critics, target smoothing and delayed actor updates."""

    algo = "td3"

    def __init__(self, obs_dim: int, act_dim: int, hp: HyperParams, rng):
        self.hp, self.obs_dim, self.act_dim = hp, obs_dim, act_dim
        arch, act = hp.net_arch, hp.activation
        self.actor = Mlp.init((obs_dim, *arch, act_dim), act, rng)
        self.q1 = Mlp.init((obs_dim + act_dim, *arch, 1), act, rng)
        self.q2 = Mlp.init((obs_dim + act_dim, *arch, 1), act, rng)
        self.actor_targ, self.q1_targ, self.q2_targ = self.actor.clone(), self.q1.clone(), self.q2.clone()
        self.opt = {n: Adam(getattr(self, n).params, hp.lr) for n in ("actor", "q1", "q2")}
        self.n_updates = 0
        self.n_actor_updates = 0

    def act(self, s, rng=None, deterministic: bool = False):
        t = np.tanh(self.actor(np.asarray(s, dtype=float)))
        if not deterministic and self.hp.noise_type == "normal" and self.hp.noise_std > 0:
            t = np.clip(t + self.hp.noise_std * rng.standard_normal(t.shape), -1.0, 1.0)
        return t, None

    def update(self, buf: ReplayBuffer, rng) -> dict:
        hp = self.hp
        s, t, r, s2, d = buf.sample(hp.batch_size, rng)
        n = len(r)
        noise = np.clip(hp.target_noise * rng.standard_normal((n, self.act_dim)), -hp.target_noise_clip, hp.target_noise_clip)
        t2 = np.clip(np.tanh(self.actor_targ(s2)) + noise, -1.0, 1.0)
        x2 = np.concatenate([s2, t2], axis=-1)
        q_next = np.minimum(self.q1_targ(x2)[:, 0], self.q2_targ(x2)[:, 0])
        target = r + hp.gamma * (1.0 - d) * q_next
        x = np.concatenate([s, t], axis=-1)
        c_loss = 0.0
        for net, name in ((self.q1, "q1"), (self.q2, "q2")):
            q, tp = net.forward(x)
            err = q[:, 0] - target
            c_loss += 0.5 * float(np.mean(err**2))
            g, _ = net.backward(tp, (err / n)[:, None])
            self.opt[name].step(net.params, g)
        self.n_updates += 1
        out = {"critic_loss": c_loss / 2.0, "actor_loss": float("nan"), "entropy": 0.0}
        if self.n_updates % hp.policy_delay == 0:
            z, a_tape = self.actor.forward(s)
            ta = np.tanh(z)
            q, q_tape = self.q1.forward(np.concatenate([s, ta], axis=-1))
            _, dx = self.q1.backward(q_tape, np.full((n, 1), -1.0 / n))
            g, _ = self.actor.backward(a_tape, dx[:, self.obs_dim:] * (1.0 - ta * ta))
            self.opt["actor"].step(self.actor.params, g)
            for targ, src in ((self.actor_targ, self.actor), (self.q1_targ, self.q1), (self.q2_targ, self.q2)):
                targ.soft_update(src, hp.tau)
            self.n_actor_updates += 1
            out["actor_loss"] = float(-np.mean(q))
        return out

    def policy_nets(self) -> dict:
        return {"actor": self.actor}


AGENTS = {"sac": SacAgent, "td3": Td3Agent}


def sample_action(agent, s, rng, deterministic: bool = False):
    """Box-mapped action and (SAC only) its log-density."""
    t, logp = agent.act(s, rng, deterministic)
    return to_box(t), logp


# ---------------------------------------------------------------------------


@dataclass
class TrainedAgent:
    agent: object
    hp: HyperParams
    seed: int
    config_hash: str
    curve: list = field(default_factory=list)

    @property
    def algo(self) -> str:
        return self.agent.algo

    def policy(self, deterministic: bool = True, rng=None) -> Callable:
        def f(vec, obs=None):
            t, _ = self.agent.act(vec, rng, deterministic)
            return to_box(t)
        return f

    def manifest(self) -> dict:
        return {"algo": self.algo, "hyperparams": self.hp.to_dict(), "seed": self.seed,
                "config_hash": self.config_hash, "obs_dim": self.agent.obs_dim, "act_dim": self.agent.act_dim,
                "param_format": "zcmes-mlp/1"}

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.agent.actor.save(out / "actor.json")
        write_curve(out / "curve.csv", self.curve)

    @classmethod
    def load(cls, out_dir) -> "TrainedAgent":
        out = Path(out_dir)
        man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        hp = HyperParams.from_dict(man["hyperparams"])
        agent = AGENTS[man["algo"]](man["obs_dim"], man["act_dim"], hp, np.random.default_rng(0))
        agent.actor = Mlp.load(out / "actor.json")
        return cls(agent, hp, man["seed"], man["config_hash"])


CURVE_FIELDS = ("step", "return", "critic_loss", "actor_loss", "entropy")


def write_curve(path, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in rows:
            w.writerow([row["step"]] + [repr(float(row[k])) for k in CURVE_FIELDS[1:]])


def _finite(stats: dict) -> bool:
    return all(np.isfinite(v) for k, v in stats.items() if k != "actor_loss" or not np.isnan(v))


def train(algo: str, env_factory: Callable, hp: HyperParams, total_steps: int, seed: int,
          checkpoint: Callable | None = None, checkpoint_every: int = 0) -> TrainedAgent:
    """Generic off-policy loop: act, store, update every ``train_freq`` steps.

    Before ``learning_starts`` actions are uniform in the box. ``checkpoint``
    (if given) is called as ``checkpoint(step, trained_agent)`` every
    ``checkpoint_every`` steps; returning ``False`` stops training early.
    """
    if total_steps < hp.learning_starts:
        raise ValueError("total_steps must be >= learning_starts")
    env = env_factory()
    rng = np.random.default_rng(seed)
    agent = AGENTS[algo](env.obs_dim, env.act_dim, hp, rng)
    buf = ReplayBuffer(hp.buffer_size, env.obs_dim, env.act_dim)
    trained = TrainedAgent(agent, hp, seed, env.cfg.content_hash())
    vec = env.normalize(env.reset())
    ep_ret = 0.0
    last = {"critic_loss": float("nan"), "actor_loss": float("nan"), "entropy": float("nan")}
    for step in range(total_steps):
        if step < hp.learning_starts:
            t = rng.uniform(-1.0, 1.0, env.act_dim)
        else:
            t, _ = agent.act(vec, rng, deterministic=False)
        res = env.step(to_box(t))
        mask = res.done if env.cfg.mask_truncation else False
        buf.push(vec, t, res.reward, res.vector, mask)
        ep_ret += res.reward
        vec = res.vector
        if step >= hp.learning_starts and step % hp.train_freq == 0 and buf.size >= hp.batch_size:
            for _ in range(hp.gradient_steps):
                stats = agent.update(buf, rng)
                if not _finite(stats):
                    raise TrainingError(f"non-finite loss at step {step}: {stats}")
                for k in last:
                    if k in stats and not np.isnan(stats[k]):
                        last[k] = stats[k]
        if res.done:
            trained.curve.append({"step": step + 1, "return": ep_ret, **last})
            ep_ret = 0.0
            vec = env.normalize(env.reset())
        if checkpoint is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
            if checkpoint(step + 1, trained) is False:
                break
    return trained


def sac_train(env_factory, hp, total_steps, seed, **kw) -> TrainedAgent:
    return train("sac", env_factory, hp, total_steps, seed, **kw)


def td3_train(env_factory, hp, total_steps, seed, **kw) -> TrainedAgent:
    return train("td3", env_factory, hp, total_steps, seed, **kw)


def evaluate(trained: TrainedAgent, env, episodes: int = 1, start_hours=None) -> float:
    """Mean raw-scaled (agent-facing) return of the deterministic policy."""
    starts = start_hours or [env.cfg.eval_start] * episodes
    pol = trained.policy(True)
    return float(np.mean([run_episode(env, pol, s).raw_return / env.cfg.reward_scale for s in starts]))
