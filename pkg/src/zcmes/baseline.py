"""Rule-based comparators: per-slot particle swarm and a greedy merit-order dispatch."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .devices import cfp_step, chp_gas_step, plr_eta
from .economics import CostBreakdown
from .environment import (
    ACTION_HIGH,
    ACTION_LOW,
    RAMP_DEVICES,
    ScenarioConfig,
    ZcmesEnv,
    evaluate_batch,
)


REDUCERS = {
    "mean": lambda best, val: best.mean(axis=0),
    "median": lambda best, val: np.median(best, axis=0),
    "best": lambda best, val: best[int(np.argmin(val))],
}


@dataclass(frozen=True)
class PsoConfig:
    particles: int = 30
    max_iters: int = 100
    action_samples: int = 200
    w: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    seed: int = 0
    reduce: str = "best"

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("particles must be >= 2")
        if self.action_samples < 1:
            raise ValueError("action_samples must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.reduce not in REDUCERS:
            raise ValueError(f"reduce must be one of {sorted(REDUCERS)}")


@dataclass
class Schedule:
    """A dispatch plan and what the planner believes it costs."""

    actions: np.ndarray
    costs: list
    start_hour: int
    history: list = field(default_factory=list)

    @property
    def cost(self) -> CostBreakdown:
        total = CostBreakdown()
        for c in self.costs:
            total = total + c
        return total

    @property
    def objective(self) -> float:
        c = self.cost
        return c.total + c.penalty


def pso_minimize(f, low, high, n_particles: int, iters: int, n_runs: int, rng, w=0.7, c1=1.5, c2=1.5):
    """Run ``n_runs`` independent swarms at once.

    ``f`` maps an ``(n_runs * n_particles, dim)`` array to objective values.
    Returns per-run best positions ``(n_runs, dim)``, their values and the
    best-value history ``(iters + 1, n_runs)``.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    dim = low.size
    span = high - low
    x = low + rng.random((n_runs, n_particles, dim)) * span
    v = np.zeros_like(x)
    fx = f(x.reshape(-1, dim)).reshape(n_runs, n_particles)
    pbest, pval = x.copy(), fx.copy()
    g = np.argmin(pval, axis=1)
    gbest = pbest[np.arange(n_runs), g]
    gval = pval[np.arange(n_runs), g]
    hist = [gval.copy()]
    for _ in range(iters):
        r1 = rng.random(x.shape)
        r2 = rng.random(x.shape)
        v = w * v + c1 * r1 * (pbest - x) + c2 * r2 * (gbest[:, None, :] - x)
        v = np.clip(v, -span, span)
        x = np.clip(x + v, low, high)
        fx = f(x.reshape(-1, dim)).reshape(n_runs, n_particles)
        better = fx < pval
        pbest[better] = x[better]
        pval[better] = fx[better]
        g = np.argmin(pval, axis=1)
        cand = pval[np.arange(n_runs), g]
        imp = cand < gval
        gbest[imp] = pbest[np.arange(n_runs), g][imp]
        gval[imp] = cand[imp]
        hist.append(gval.copy())
    return gbest, gval, np.array(hist)


def pso_schedule(cfg_or_env, horizon: int | None = None, pso: PsoConfig = PsoConfig(), start_hour: int | None = None,
                 active=None) -> Schedule:
    """Myopic per-slot swarm dispatch.

    Each slot is optimized on its own (storage and ramp effects on later
    slots are ignored). Each slot runs ``action_samples`` independent swarms;
    their optima are reduced to one action by ``pso.reduce`` (the best optimum
    by default, or their mean or median) and the state is advanced with it.
    ``active`` restricts the search to those action indices; the rest stay 0.
    """
    env = cfg_or_env if isinstance(cfg_or_env, ZcmesEnv) else ZcmesEnv(cfg_or_env)
    cfg = env.cfg
    horizon = cfg.episode_length if horizon is None else horizon
    if horizon > cfg.episode_length:
        raise ValueError("horizon must not exceed the episode length")
    start = cfg.eval_start if start_hour is None else start_hour
    rng = np.random.default_rng(pso.seed)
    low, high = ACTION_LOW.copy(), ACTION_HIGH.copy()
    if active is not None:
        off = np.setdiff1d(np.arange(low.size), np.asarray(active, dtype=int))
        low[off] = high[off] = 0.0
    soc_b, soc_h = cfg.soc_init, cfg.soc_init
    prev = np.zeros(len(RAMP_DEVICES))
    actions, costs, hist = [], [], []
    for k in range(horizon):
        exo = env.series.at(start + k)

        def f(x, exo=exo, sb=soc_b, sh=soc_h, pr=prev):
            _, c = evaluate_batch(cfg, x, exo, sb, sh, pr[None, :])
            return c.objective

        best, val, h = pso_minimize(f, low, high, pso.particles, pso.max_iters, pso.action_samples, rng,
                                  pso.w, pso.c1, pso.c2)
        a = REDUCERS[pso.reduce](best, val)
        d, c = evaluate_batch(cfg, a[None, :], exo, soc_b, soc_h, prev[None, :])
        actions.append(a)
        costs.append(c.breakdown(0))
        hist.append(h.min(axis=1))
        soc_b, soc_h = float(d.soc_b[0]), float(d.soc_h[0])
        prev = d.outputs()[0].astype(float)
    return Schedule(np.array(actions), costs, start, hist)


def greedy_action(cfg: ScenarioConfig, exo) -> np.ndarray:
    """Merit-order loading rates for one hour with storage idle and capture off.

    Cooling goes to the absorption chiller first (it runs on recovered heat),
    electricity comes from renewables, then coal, then the gas turbine, and
    any heat shortfall is covered by the boiler and then the heat pump.
    """
    pv, pw, el, hl, cl = (float(x) for x in exo)
    dev = cfg.devices
    res_avail = pv + pw
    ac, ec, cfp, gt, gb, hp = (dev[n] for n in ("AC", "EC", "CFP", "GT", "GB", "WSHP"))
    a = np.zeros(11)

    c_ac = min(cl, ac.p_rated)
    c_ec = min(cl - c_ac, ec.p_rated)
    a[8] = c_ac / ac.p_rated
    a[7] = c_ec / ec.p_rated
    d_ac = a[8]
    h_ac = c_ac / plr_eta(ac, d_ac, cfg.plr_enabled) if c_ac > 0 else 0.0
    e_ec = c_ec / plr_eta(ec, a[7], cfg.plr_enabled) if c_ec > 0 else 0.0

    e_hp = 0.0
    for _ in range(20):
        e_need = el + e_ec + e_hp
        a[0] = 1.0 if res_avail <= e_need or res_avail == 0 else e_need / res_avail
        rem = max(e_need - res_avail, 0.0)
        a[1] = min(rem / cfp.p_rated, 1.0)
        rem -= a[1] * cfp.p_rated
        a[2] = min(max(rem, 0.0) / gt.p_rated, 1.0)
        heat = _chp_heat(cfg, a[1], a[2])
        h_def = max(hl + h_ac - heat, 0.0)
        a[3] = min(h_def / gb.p_rated, 1.0)
        h_def -= a[3] * gb.p_rated
        a[4] = min(max(h_def, 0.0) / hp.p_rated, 1.0)
        new_e_hp = a[4] * hp.p_rated / plr_eta(hp, a[4], cfg.plr_enabled) if a[4] > 0 else 0.0
        if abs(new_e_hp - e_hp) < 1e-12:
            break
        e_hp = new_e_hp
    return a


def _chp_heat(cfg, d_cfp, d_gt) -> float:
    return float(cfp_step(cfg.devices["CFP"], d_cfp, cfg.plr_enabled).h_out
                 + chp_gas_step(cfg.devices["GT"], d_gt, cfg.plr_enabled).h_out)


def greedy_schedule(cfg_or_env, horizon: int | None = None, start_hour: int | None = None) -> Schedule:
    env = cfg_or_env if isinstance(cfg_or_env, ZcmesEnv) else ZcmesEnv(cfg_or_env)
    cfg = env.cfg
    horizon = cfg.episode_length if horizon is None else horizon
    start = cfg.eval_start if start_hour is None else start_hour
    soc_b, soc_h = cfg.soc_init, cfg.soc_init
    prev = np.zeros(len(RAMP_DEVICES))
    actions, costs = [], []
    for k in range(horizon):
        exo = env.series.at(start + k)
        a = greedy_action(cfg, exo)
        d, c = evaluate_batch(cfg, a[None, :], exo, soc_b, soc_h, prev[None, :])
        actions.append(a)
        costs.append(c.breakdown(0))
        soc_b, soc_h = float(d.soc_b[0]), float(d.soc_h[0])
        prev = d.outputs()[0].astype(float)
    return Schedule(np.array(actions), costs, start)
