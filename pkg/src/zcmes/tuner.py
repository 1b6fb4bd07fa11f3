"""Hyperparameter search: univariate Parzen (TPE-style) sampler, median pruning,
window early stop, importance ranking and a resumable JSON-lines study file."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .agents import HyperParams, default_hp, evaluate, train


class TuningError(RuntimeError):
    pass


class Pruned(Exception):
    """Raised inside an objective to abandon the current trial."""


@dataclass(frozen=True)
class Float:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high or (self.log and self.low <= 0):
            raise ValueError(f"bad float domain [{self.low}, {self.high}] log={self.log}")

    def to_internal(self, x):
        return np.log(x) if self.log else np.asarray(x, dtype=float)

    def from_internal(self, z):
        return float(np.exp(z) if self.log else z)

    @property
    def bounds(self):
        return (math.log(self.low), math.log(self.high)) if self.log else (self.low, self.high)


@dataclass(frozen=True)
class Choice:
    """Integer set or categorical set; values must be JSON-representable."""

    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ValueError("empty choice domain")


def _json_value(v):
    return list(v) if isinstance(v, tuple) else v


def _key(v):
    return json.dumps(_json_value(v))


def default_space(algo: str = "sac") -> dict:
    space = {
        "gamma": Float(0.90, 0.999),
        "lr": Float(1e-4, 1e-2, log=True),
        "buffer_size": Choice((10_000, 50_000, 100_000)),
        "batch_size": Choice((128, 256, 512, 1024)),
        "learning_starts": Choice((100, 500, 1000)),
        "train_freq": Choice((1, 2, 4)),
        "gradient_steps": Choice((1, 2)),
        "tau": Float(0.005, 0.1),
        "net_arch": Choice(((32, 32), (64, 64), (128, 128))),
        "activation": Choice(("relu", "tanh")),
    }
    if algo == "sac":
        space["ent_coef"] = Float(1e-3, 0.2, log=True)
    else:
        space["noise_type"] = Choice(("normal", "none"))
        space["noise_std"] = Float(0.05, 0.8)
        space["policy_delay"] = Choice((1, 2, 3))
        space["target_noise"] = Float(0.05, 0.4)
        space["target_noise_clip"] = Float(0.1, 0.5)
    return space


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    objective: float | None = None
    pruned: bool = False
    intermediate: list = field(default_factory=list)

    def __post_init__(self):
        if self.pruned and self.objective is not None:
            raise ValueError("pruned trials carry no objective")

    @property
    def complete(self) -> bool:
        return not self.pruned and self.objective is not None

    def to_json(self) -> str:
        return json.dumps({"trial_id": self.trial_id, "params": {k: _json_value(v) for k, v in self.params.items()},
                           "objective": self.objective, "pruned": self.pruned,
                           "intermediate": self.intermediate}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        return cls(d["trial_id"], d["params"], d["objective"], d["pruned"], [list(x) for x in d["intermediate"]])


# ---------------------------------------------------------------------------
# Sampling


def _sample_random(space: dict, rng) -> dict:
    out = {}
    for name, dom in space.items():
        if isinstance(dom, Float):
            lo, hi = dom.bounds
            out[name] = dom.from_internal(rng.uniform(lo, hi))
        else:
            out[name] = dom.values[int(rng.integers(len(dom.values)))]
    return out


def _parzen(points, lo, hi):
    """Mixture of Gaussians at ``points`` plus a broad prior component."""
    pts = np.sort(np.asarray(points, dtype=float))
    span = hi - lo
    mus = np.append(pts, 0.5 * (lo + hi))
    if len(pts) > 1:
        ext = np.concatenate([[lo], pts, [hi]])
        sig = np.maximum(ext[1:-1] - ext[:-2], ext[2:] - ext[1:-1])
    else:
        sig = np.full(len(pts), span)
    sig = np.clip(sig, span / min(100.0, 1.0 + len(pts)), span)
    sigmas = np.append(sig, span)
    return mus, sigmas


def _log_pdf(x, mus, sigmas):
    z = (x[:, None] - mus[None, :]) / sigmas[None, :]
    comp = -0.5 * z**2 - np.log(sigmas)[None, :]
    m = comp.max(axis=1, keepdims=True)
    return (m[:, 0] + np.log(np.exp(comp - m).sum(axis=1))) - np.log(len(mus))


def _sample_tpe(space: dict, done: list, rng, n_candidates: int = 24, gamma: float = 0.25) -> dict:
    ys = np.array([r.objective for r in done])
    order = np.argsort(-ys, kind="stable")
    n_good = max(1, int(math.ceil(gamma * len(done))))
    good = [done[i] for i in order[:n_good]]
    bad = [done[i] for i in order[n_good:]] or good
    out = {}
    for name, dom in space.items():
        if isinstance(dom, Float):
            lo, hi = dom.bounds
            g_mu, g_sig = _parzen([dom.to_internal(r.params[name]) for r in good], lo, hi)
            b_mu, b_sig = _parzen([dom.to_internal(r.params[name]) for r in bad], lo, hi)
            comp = rng.integers(len(g_mu), size=n_candidates)
            cand = np.clip(rng.normal(g_mu[comp], g_sig[comp]), lo, hi)
            score = _log_pdf(cand, g_mu, g_sig) - _log_pdf(cand, b_mu, b_sig)
            out[name] = dom.from_internal(cand[int(np.argmax(score))])
        else:
            keys = [_key(v) for v in dom.values]
            gc = np.ones(len(keys))
            bc = np.ones(len(keys))
            for r in good:
                gc[keys.index(_key(r.params[name]))] += 1
            for r in bad:
                bc[keys.index(_key(r.params[name]))] += 1
            gp, bp = gc / gc.sum(), bc / bc.sum()
            cand = rng.choice(len(keys), size=n_candidates, p=gp)
            best = cand[int(np.argmax(np.log(gp[cand]) - np.log(bp[cand])))]
            out[name] = dom.values[int(best)]
    return out


def _median_prune(records: list, step: int, value: float, n_startup: int) -> bool:
    peers = [v for r in records if not r.pruned for s, v in r.intermediate if s == step]
    if len(peers) < n_startup:
        return False
    return value < float(np.median(peers))


# ---------------------------------------------------------------------------


@dataclass
class Study:
    records: list
    best: dict | None
    stopped_early: bool = False

    @property
    def best_value(self) -> float | None:
        done = [r.objective for r in self.records if r.complete]
        return max(done) if done else None


def load_study(path) -> list:
    p = Path(path)
    if not p.exists():
        return []
    return [TrialRecord.from_json(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def _should_stop(records: list, window: int, threshold: float, min_trials: int) -> bool:
    vals = [r.objective for r in records if r.complete]
    if len(vals) < max(min_trials, window + 1):
        return False
    best = np.maximum.accumulate(vals)
    return best[-1] - best[-1 - window] < threshold


def optimize(objective: Callable, space: dict, budget: int, seed: int = 0, study_path=None, enqueue=(),
             n_startup: int = 10, prune_startup: int = 5, window: int = 5, threshold: float = 5e-4,
             stop_after: int = 50, sampler: str = "tpe") -> Study:
    """Maximize ``objective(params, report)``.

    ``report(step, value)`` records an intermediate value and raises
    :class:`Pruned` when the value falls below the median of earlier trials
    at the same step. Once ``stop_after`` trials are complete the search
    ends when the best value gained less than ``threshold`` over the last
    ``window`` trials. Trial ``k`` draws from ``default_rng([seed, k])`` so a
    resumed study samples exactly as an uninterrupted one.
    """
    if budget < 2:
        raise ValueError("budget must be >= 2")
    records = load_study(study_path) if study_path else []
    queue = list(enqueue)
    stopped = False
    next_id = max((r.trial_id for r in records), default=-1) + 1
    while next_id < budget:
        if _should_stop(records, window, threshold, stop_after):
            stopped = True
            break
        rng = np.random.default_rng([seed, next_id])
        if next_id < len(queue):
            params = dict(queue[next_id])
        else:
            done = [r for r in records if r.complete]
            if sampler == "tpe" and len(done) >= n_startup:
                params = _sample_tpe(space, done, rng)
            else:
                params = _sample_random(space, rng)
        rec = TrialRecord(next_id, params)

        def report(step, value, rec=rec):
            rec.intermediate.append([int(step), float(value)])
            if _median_prune(records, step, value, prune_startup):
                raise Pruned()

        try:
            rec.objective = float(objective(params, report))
        except Pruned:
            rec.pruned = True
        records.append(rec)
        if study_path:
            with Path(study_path).open("a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
        next_id += 1
    done = [r for r in records if r.complete]
    if not done:
        raise TuningError(f"all {len(records)} trials were pruned; intermediates: "
                          + "; ".join(f"#{r.trial_id}: {r.intermediate}" for r in records))
    best = max(done, key=lambda r: r.objective)
    return Study(records, best.params, stopped)


def hp_from_params(algo: str, params: dict, base: HyperParams | None = None) -> HyperParams:
    d = (base or default_hp(algo)).to_dict()
    d.update(params)
    d["net_arch"] = tuple(d["net_arch"])
    return HyperParams.from_dict(d)


def rl_objective(algo: str, env_factory: Callable, steps: int, seeds=(0,), eval_starts=None, checkpoints: int = 2,
                 episodes: int = 5):
    """Mean deterministic evaluation return after ``steps`` of training, averaged over ``seeds``.

    Each evaluation rolls ``episodes`` days (the first training days unless
    ``eval_starts`` is given).
    """

    def objective(params, report):
        hp = hp_from_params(algo, params)
        hp = HyperParams.from_dict({**hp.to_dict(), "learning_starts": min(hp.learning_starts, steps),
                                    "batch_size": min(hp.batch_size, hp.buffer_size)})
        env = env_factory()
        starts = list(eval_starts or env.train_starts()[:episodes])
        vals = []
        for sd in seeds:
            every = max(steps // checkpoints, 1) if checkpoints else 0

            def ckpt(step, trained, sd=sd):
                if step < steps and sd == seeds[0]:
                    report(step, evaluate(trained, env, start_hours=starts))
                return True

            trained = train(algo, env_factory, hp, steps, sd, checkpoint=ckpt, checkpoint_every=every)
            vals.append(evaluate(trained, env, start_hours=starts))
        return float(np.mean(vals))

    return objective


def tune(algo: str, env_factory: Callable, space: dict | None = None, budget: int = 50, steps: int = 30_000,
         seed: int = 0, seeds=(0,), study_path=None, include_default: bool = True, **kw):
    """Search hyperparameters for ``algo``; returns ``(best HyperParams, Study)``.

    With ``include_default`` the untuned defaults are evaluated as trial 0.
    """
    space = space or default_space(algo)
    enqueue = []
    if include_default:
        d = default_hp(algo).to_dict()
        enqueue.append({k: (tuple(d[k]) if k == "net_arch" else d[k]) for k in space})
    study = optimize(rl_objective(algo, env_factory, steps, seeds), space, budget, seed, study_path, enqueue, **kw)
    return hp_from_params(algo, study.best), study


def importance(records: list, space: dict | None = None, n_bins: int = 4) -> list:
    """Rank hyperparameters by how much of the objective variance a
    piecewise-constant fit on that parameter alone explains.

    Scores are adjusted R^2 (clipped at 0) normalized to sum to 1; with no
    signal all parameters score equally. A lightweight stand-in for fANOVA.
    """
    done = [r for r in records if r.complete]
    if len(done) < 10:
        raise TuningError(f"importance needs >= 10 completed trials, got {len(done)}")
    names = sorted(space) if space else sorted(done[0].params)
    y = np.array([r.objective for r in done])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    n = len(y)
    scores = {}
    for name in names:
        vals = [r.params[name] for r in done]
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals) and len({_key(v) for v in vals}) > n_bins:
            x = np.array(vals, dtype=float)
            edges = np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1])
            groups = np.searchsorted(edges, x, side="right")
        else:
            keys = sorted({_key(v) for v in vals})
            groups = np.array([keys.index(_key(v)) for v in vals])
        k = len(np.unique(groups))
        if ss_tot <= 0 or k < 2 or n - k < 1:
            scores[name] = 0.0
            continue
        fit = np.zeros(n)
        for gi in np.unique(groups):
            fit[groups == gi] = y[groups == gi].mean()
        r2 = 1.0 - float(np.sum((y - fit) ** 2)) / ss_tot
        adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k)
        scores[name] = max(adj, 0.0)
    tot = sum(scores.values())
    if tot <= 0:
        return [(nm, 1.0 / len(names)) for nm in names]
    ranked = sorted(((nm, s / tot) for nm, s in scores.items()), key=lambda kv: (-kv[1], kv[0]))
    return ranked
