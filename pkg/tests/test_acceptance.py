"""End-to-end acceptance checks C1..C11 at desk scale.

Each test prints one ``PASS Cn ...`` or ``FAIL Cn ...`` line straight to the
terminal and then asserts. The whole module takes roughly a quarter hour on
one CPU core.
"""

import dataclasses
import time

import numpy as np
import pytest

from zcmes import devices as dv
from zcmes.agents import evaluate, preset, train
from zcmes.baseline import PsoConfig, pso_schedule
from zcmes.devices import StorageSpec, StorageState
from zcmes.environment import (
    ACTION_HIGH,
    ACTION_LOW,
    CASE_VARIANT,
    ZcmesEnv,
    case_config,
    replay_actions,
    rollout,
)
from zcmes.neural import Mlp
from zcmes.tuner import Choice, default_space, tune

from test_baseline import grid_optimum, reduced_env
from test_cli import run_all, tree_bytes
from test_neural import fd_check


@pytest.fixture
def verdict(capsys):
    def emit(tag: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {tag} {detail}", flush=True)
        assert ok, f"{tag}: {detail}"
    return emit


@pytest.fixture(scope="module")
def pso_runs():
    """Full-size PSO schedules on the evaluation day, one per case, replayed."""
    out = {}
    for case in (1, 2, 3, 4):
        env = ZcmesEnv(case_config(case))
        sched = pso_schedule(env)
        out[case] = (env, sched, replay_actions(env, sched.actions, sched.start_hour))
    return out


def test_c1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(20):
        depth = int(rng.integers(1, 4))
        widths = [int(rng.integers(1, 7)) for _ in range(depth + 2)]
        net = Mlp.init(widths, ("relu", "tanh")[k % 2], seed=k)
        x = rng.standard_normal((3, widths[0]))
        worst = max(worst, fd_check(net, x, rng))
    dt = time.perf_counter() - t0
    verdict("C1", worst < 1e-4 and dt < 10.0, f"max rel err {worst:.2e}, {dt:.2f} s")


def test_c2_carbon_conservation(verdict):
    rng = np.random.default_rng(2)
    worst_mass = worst_cri = 0.0
    n = 0
    for case in (1, 2, 3, 4):
        env = ZcmesEnv(case_config(case))
        starts = [env.cfg.eval_start, *env.train_starts()[:2]]
        pol = lambda v, o: rng.uniform(ACTION_LOW, ACTION_HIGH)
        for rep in rollout(pol, env, len(starts), starts):
            n += 1
            worst_mass = max(worst_mass, abs(rep.total_emit - rep.captured - rep.released))
            m = rep.metrics(CASE_VARIANT[case])
            if m:
                worst_cri = max(worst_cri, abs(m["cri"] + rep.captured / rep.total_emit - 1.0))
    ok = worst_mass <= 1e-9 and worst_cri <= 1e-9
    verdict("C2", ok, f"{n} rollouts, mass residual {worst_mass:.2e} t, CRI identity residual {worst_cri:.2e}")


def test_c3_storage_physics(verdict):
    spec = StorageSpec("S", q_cap=1000.0, p_rated=100.0, eta_ch=0.93, eta_dch=0.88, soc_min=0.0, soc_max=1.0,
                       hard_margin=0.0)
    s0 = StorageState(0.2)
    s, e_in = s0, 0.0
    for c in (0.5, 1.0, 0.25):
        s, p, _ = dv.storage_step(s, spec, -c)
        e_in += -p
    e_out = 0.0
    while s.soc > s0.soc + 1e-15:
        need = (s.soc - s0.soc) * spec.q_cap * spec.eta_dch
        s, p, _ = dv.storage_step(s, spec, min(1.0, need / spec.p_rated))
        e_out += p
    rt_err = abs(e_out / e_in - spec.eta_ch * spec.eta_dch)

    rng = np.random.default_rng(3)
    bad = 0
    bes = StorageSpec("S", q_cap=50.0, p_rated=40.0)
    for _ in range(1000):
        st = StorageState(float(rng.uniform(bes.soc_floor, bes.soc_ceiling)))
        for d in rng.uniform(-1, 1, 12):
            st, _, pen = dv.storage_step(st, bes, d)
            inside = bes.soc_min <= st.soc <= bes.soc_max
            bad += (pen != 0.0) if inside else (pen <= 0.0)
    verdict("C3", rt_err <= 1e-9 and bad == 0,
            f"round-trip error {rt_err:.2e}, SOC-penalty violations {bad} over 1000 trajectories")


def test_c4_pso_cost_consistency(verdict, pso_runs):
    worst = 0.0
    for case, (env, sched, rep) in pso_runs.items():
        worst = max(worst, abs(rep.objective - sched.objective) / abs(sched.objective),
                    abs(rep.cost.total - sched.cost.total) / abs(sched.cost.total))
    verdict("C4", worst <= 1e-6, f"max relative gap claimed vs re-simulated {worst:.2e}")


def test_c5_oracle_optimality(verdict):
    t0 = time.perf_counter()
    env = reduced_env()
    sched = pso_schedule(env, pso=PsoConfig(seed=0, action_samples=20), active=[3])
    best = grid_optimum(env)
    dt = time.perf_counter() - t0
    gap = sched.objective / best - 1.0
    verdict("C5", gap <= 0.02 and dt < 60.0, f"PSO {sched.objective:.2f} vs grid {best:.2f} (gap {100 * gap:.3f}%), "
                                             f"{dt:.1f} s")


@pytest.mark.slow
def test_c6_learning_works(verdict):
    t0 = time.perf_counter()
    cfg = ZcmesEnv(case_config(1)).cfg
    trained = train("sac", lambda: ZcmesEnv(cfg), preset("sac", "desk"), 20_000, seed=0)
    dt = time.perf_counter() - t0
    r = np.array([c["return"] for c in trained.curve])
    k = max(1, len(r) // 10)
    first, last = r[:k].mean(), r[-k:].mean()
    gain = (last - first) / abs(first)
    verdict("C6", gain >= 0.20 and dt < 300.0,
            f"{len(r)} episodes, first 10% {first:.2f}, last 10% {last:.2f} ({100 * gain:.1f}%), {dt:.0f} s")


@pytest.mark.slow
def test_c7_tuning_helps(verdict, tmp_path):
    steps, seeds = 2000, (0, 1)
    cfg = ZcmesEnv(case_config(1)).cfg
    factory = lambda: ZcmesEnv(cfg)
    space = default_space("sac")
    # surrogate-fast schedule: small nets and batches
    space["batch_size"] = Choice((64, 128))
    space["net_arch"] = Choice(((32, 32), (64, 64)))
    space["learning_starts"] = Choice((100, 500, 1000))
    best, study = tune("sac", factory, space, budget=10, steps=steps, seed=0, seeds=seeds,
                       study_path=tmp_path / "study.jsonl")
    default = preset("sac", "default")
    env = factory()
    starts = env.train_starts()[:5]

    def score(hp):
        return float(np.mean([evaluate(train("sac", factory, hp, steps, s), env, start_hours=starts) for s in seeds]))

    tuned_r, default_r = score(best), score(default)
    verdict("C7", tuned_r >= default_r,
            f"tuned {tuned_r:.4f} vs default {default_r:.4f} over seeds {seeds} "
            f"({sum(r.complete for r in study.records)} trials completed)")


@pytest.mark.slow
def test_c8_rl_beats_baseline(verdict, pso_runs):
    env, sched, rep = pso_runs[4]
    cfg = env.cfg
    pso_obj = rep.objective
    objs = []
    for seed in (0, 1, 2):
        trained = train("sac", lambda: ZcmesEnv(cfg), preset("sac", "desk"), 20_000, seed=seed)
        r = rollout(trained.policy(True), ZcmesEnv(cfg), 1, [cfg.eval_start])[0]
        objs.append(r.objective)
    ok = all(o <= pso_obj for o in objs)
    verdict("C8", ok, "SAC objective per seed " + ", ".join(f"{o:.0f}" for o in objs) + f" vs PSO {pso_obj:.0f}")


def test_c9_case_ordering(verdict, pso_runs):
    cdr = {c: pso_runs[c][2].cost.cdr for c in (2, 3, 4)}
    ccrr = {c: pso_runs[c][2].metrics(CASE_VARIANT[c])["ccrr"] for c in (2, 4)}
    ok = cdr[4] < cdr[3] < cdr[2] and ccrr[4] > ccrr[2]
    verdict("C9", ok, f"CDR cost case2 {cdr[2]:.0f}, case3 {cdr[3]:.0f}, case4 {cdr[4]:.0f}; "
                      f"CCRR case2 {ccrr[2]:.3f}, case4 {ccrr[4]:.3f}")


def test_c10_carbon_price_sweep(verdict):
    base = ZcmesEnv(case_config(4))
    cfg = base.cfg
    prices = (30, 100, 200, 300, 400, 500)
    released, frac = [], []
    for p in prices:
        c = dataclasses.replace(cfg, tariffs=dataclasses.replace(cfg.tariffs, co2=float(p)))
        env = ZcmesEnv(c, series=base.series)
        sched = pso_schedule(env)
        rep = replay_actions(env, sched.actions, sched.start_hour)
        released.append(rep.released)
        frac.append(rep.captured / rep.total_emit)
    mono = all(b <= a * 1.01 for a, b in zip(released, released[1:]))
    ok = mono and frac[-1] > frac[0]
    verdict("C10", ok, "released " + ", ".join(f"{r:.1f}" for r in released)
            + f" t; captured fraction {frac[0]:.3f} at 30 vs {frac[-1]:.3f} at 500")


def test_c11_cli_determinism(verdict, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_all(a)
    run_all(b)
    ta, tb = tree_bytes(a), tree_bytes(b)
    diff = sorted(set(ta) ^ set(tb)) + [k for k in ta if k in tb and ta[k] != tb[k]]
    verdict("C11", not diff, f"{len(ta)} files compared across two runs, {len(diff)} differ")
