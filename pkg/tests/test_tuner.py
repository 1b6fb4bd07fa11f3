import dataclasses

import numpy as np
import pytest

from zcmes.agents import HyperParams
from zcmes.environment import ZcmesEnv, default_config
from zcmes.tuner import (
    Choice,
    Float,
    Pruned,
    TrialRecord,
    TuningError,
    default_space,
    hp_from_params,
    importance,
    load_study,
    optimize,
    tune,
)

SPACE = {"x": Float(-5.0, 5.0), "y": Float(0.0, 10.0)}


def quad(params, report):
    return -((params["x"] - 1.3) ** 2) - (params["y"] - 7.1) ** 2


def test_quadratic_surrogate_within_five_percent():
    study = optimize(quad, SPACE, budget=50, seed=0, threshold=0.0)
    assert abs(study.best["x"] - 1.3) <= 0.05 * 10.0
    assert abs(study.best["y"] - 7.1) <= 0.05 * 10.0


def test_tpe_beats_random_on_average():
    tpe = [optimize(quad, SPACE, 40, seed=s, threshold=0.0).best_value for s in range(3)]
    rnd = [optimize(quad, SPACE, 40, seed=s, threshold=0.0, sampler="random").best_value for s in range(3)]
    assert np.mean(tpe) >= np.mean(rnd)


def test_fixed_seed_identical_sequence():
    a = optimize(quad, SPACE, 15, seed=4)
    b = optimize(quad, SPACE, 15, seed=4)
    assert [r.to_json() for r in a.records] == [r.to_json() for r in b.records]


def test_best_monotone():
    study = optimize(quad, SPACE, 30, seed=1, threshold=0.0)
    vals = [r.objective for r in study.records if r.complete]
    running = np.maximum.accumulate(vals)
    assert np.all(np.diff(running) >= 0) and running[-1] == study.best_value


def test_resume_matches_uninterrupted(tmp_path):
    full = optimize(quad, SPACE, 14, seed=2, study_path=tmp_path / "a.jsonl", threshold=0.0)
    optimize(quad, SPACE, 6, seed=2, study_path=tmp_path / "b.jsonl", threshold=0.0)
    resumed = optimize(quad, SPACE, 14, seed=2, study_path=tmp_path / "b.jsonl", threshold=0.0)
    ids = [r.trial_id for r in load_study(tmp_path / "b.jsonl")]
    assert ids == list(range(14))
    assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()
    assert resumed.best == full.best


def test_pruning_contract():
    def obj(params, report):
        for step in (1, 2):
            report(step, params["x"])
        return params["x"]

    study = optimize(obj, {"x": Float(0.0, 1.0)}, 30, seed=0, threshold=0.0)
    pruned = [r for r in study.records if r.pruned]
    assert pruned, "expected some trials below the running median to be pruned"
    assert all(r.objective is None for r in pruned)
    with pytest.raises(ValueError):
        TrialRecord(0, {}, objective=1.0, pruned=True)


def test_all_pruned_raises():
    def always_prune(params, report):
        raise Pruned()

    with pytest.raises(TuningError, match="pruned"):
        optimize(always_prune, SPACE, 3, seed=0)


def test_early_stop_halts_new_trials():
    seen = []

    def flat(params, report):
        seen.append(1)
        return 1.0

    study = optimize(flat, SPACE, 50, seed=0, n_startup=10, window=5, threshold=5e-4, stop_after=10)
    assert study.stopped_early and len(study.records) == len(seen) < 50


def test_budget_validation():
    with pytest.raises(ValueError):
        optimize(quad, SPACE, 1)


def test_domains():
    with pytest.raises(ValueError):
        Float(1.0, 1.0)
    with pytest.raises(ValueError):
        Float(0.0, 1.0, log=True)
    with pytest.raises(ValueError):
        Choice(())


@pytest.mark.parametrize("algo", ["sac", "td3"])
def test_default_space_reaches_hyperparams(algo):
    space = default_space(algo)
    fields = {f.name for f in dataclasses.fields(HyperParams)}
    assert set(space) <= fields
    shared = fields - {"ent_coef", "noise_type", "noise_std", "policy_delay", "target_noise", "target_noise_clip"}
    assert shared <= set(space)
    specific = {"ent_coef"} if algo == "sac" else {"noise_type", "noise_std", "policy_delay", "target_noise",
                                                   "target_noise_clip"}
    assert specific <= set(space)
    lr = space["lr"]
    assert (lr.low, lr.high, lr.log) == (1e-4, 1e-2, True)
    assert space["batch_size"].values == (128, 256, 512, 1024)
    rng = np.random.default_rng(0)
    from zcmes.tuner import _sample_random
    hp = hp_from_params(algo, _sample_random(space, rng))
    assert isinstance(hp, HyperParams)


def _records(fn, n=40, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        p = {"a": float(rng.uniform()), "b": float(rng.uniform()), "c": str(rng.choice(["u", "v"]))}
        out.append(TrialRecord(i, p, fn(p)))
    return out


def test_importance_single_driver():
    ranked = importance(_records(lambda p: 10 * p["a"]))
    assert ranked[0][0] == "a" and ranked[0][1] > 0.9
    assert sum(s for _, s in ranked) == pytest.approx(1.0, abs=1e-9)


def test_importance_constant_is_uniform():
    ranked = importance(_records(lambda p: 3.0))
    assert all(s == pytest.approx(1 / 3) for _, s in ranked)


def test_importance_needs_ten():
    with pytest.raises(TuningError):
        importance(_records(lambda p: p["a"], n=9))


def test_importance_deterministic():
    recs = _records(lambda p: p["a"] + (p["c"] == "u"))
    assert importance(recs) == importance(recs)


def test_tune_smoke(tmp_path):
    cfg = default_config(1)
    space = {"lr": Float(1e-4, 1e-2, log=True), "learning_starts": Choice((48,)), "net_arch": Choice(((8, 8),)),
             "batch_size": Choice((16,))}
    hp, study = tune("sac", lambda: ZcmesEnv(cfg), space, budget=3, steps=96, seed=0,
                     study_path=tmp_path / "s.jsonl")
    assert len(study.records) == 3 and study.records[0].params["lr"] == 3e-4
    assert isinstance(hp, HyperParams) and hp.net_arch == (8, 8)
    assert len((tmp_path / "s.jsonl").read_text().splitlines()) == 3


def test_early_stop_waits_for_stop_after():
    study = optimize(lambda p, r: 1.0, SPACE, 40, seed=0, threshold=5e-4)
    assert not study.stopped_early and len(study.records) == 40
