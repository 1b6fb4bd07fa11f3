import numpy as np
import pytest

from zcmes.agents import (
    BufferStateError,
    HyperParams,
    ReplayBuffer,
    SacAgent,
    Td3Agent,
    TrainedAgent,
    buffer_push,
    buffer_sample,
    preset,
    sample_action,
    squashed_log_prob,
    to_box,
    from_box,
    train,
)
from zcmes.environment import ACTION_HIGH, ACTION_LOW, ZcmesEnv, default_config

TARGET = 0.5
S = np.ones(1)


def bandit_hp(**kw):
    base = dict(gamma=0.9, lr=3e-3, buffer_size=4096, batch_size=64, learning_starts=0, tau=0.05,
                net_arch=(32, 32), ent_coef=0.01, noise_std=0.3)
    base.update(kw)
    return HyperParams(**base)


def run_bandit(agent, n_updates, rng):
    """One-state, one-step bandit: reward peaks at action TARGET."""
    buf = ReplayBuffer(4096, 1, 1)
    for _ in range(256):
        t = rng.uniform(-1, 1, 1)
        buf.push(S, t, -((t[0] - TARGET) ** 2), S, True)
    ents = []
    for _ in range(n_updates):
        t, _ = agent.act(S, rng)
        buf.push(S, t, -((t[0] - TARGET) ** 2), S, True)
        ents.append(agent.update(buf, rng)["entropy"])
    return ents


# -- replay ----------------------------------------------------------------

def test_buffer_ring_and_errors():
    buf = ReplayBuffer(3, 1, 1)
    with pytest.raises(BufferStateError):
        buf.sample(1, np.random.default_rng(0))
    for i in range(4):
        buffer_push(buf, [i], [0.0], float(i), [i], False)
    assert buf.size == 3 and sorted(buf.r.tolist()) == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        buf.push([np.nan], [0.0], 0.0, [0.0], False)


def test_buffer_sampling_deterministic_and_uniform():
    buf = ReplayBuffer(10, 1, 1)
    for i in range(10):
        buf.push([i], [0.0], 0.0, [i], False)
    a = buffer_sample(buf, 5, np.random.default_rng(7))
    b = buffer_sample(buf, 5, np.random.default_rng(7))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    r = np.random.default_rng(0)
    idx = np.concatenate([buf.sample_indices(10, r) for _ in range(10_000)])
    counts = np.bincount(idx, minlength=10)
    chi2 = np.sum((counts - 10_000) ** 2 / 10_000)
    assert chi2 < 27.88  # 99.9th percentile, 9 dof
    assert np.all(np.abs(counts - 10_000) < 3 * np.sqrt(100_000 * 0.1 * 0.9))


# -- hyperparameters ---------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(gamma=1.0), dict(tau=0.0), dict(batch_size=200, buffer_size=100),
                                dict(noise_type="ou")])
def test_hyperparam_invariants(kw):
    with pytest.raises(ValueError):
        HyperParams(**kw)


def test_published_presets():
    sac = preset("sac", "published")
    assert (sac.gamma, sac.lr, sac.batch_size, sac.tau, sac.ent_coef, sac.net_arch) == (0.96, 0.00122, 512, 0.02, 0.05, (400, 300))
    td3 = preset("td3", "published")
    assert (td3.gamma, td3.lr, td3.batch_size, td3.tau, td3.noise_std) == (0.90, 0.00148, 1024, 0.08, 0.5237)
    assert HyperParams.from_dict(sac.to_dict()) == sac


def test_box_maps():
    assert np.array_equal(to_box(-np.ones(11)), ACTION_LOW)
    assert np.array_equal(to_box(np.ones(11)), ACTION_HIGH)
    t = np.linspace(-1, 1, 11)
    assert np.allclose(from_box(to_box(t)), t)


# -- SAC ---------------------------------------------------------------------

def _sac(rng, **kw):
    return SacAgent(1, 1, bandit_hp(**kw), rng)


def test_squashed_density_integrates_to_one():
    t = np.linspace(-1 + 1e-9, 1 - 1e-9, 400_001)
    u = np.arctanh(t)[:, None]
    for mu, ls in ((0.0, 0.0), (0.7, -1.0), (-1.2, 0.3)):
        p = np.exp(squashed_log_prob(u, np.array([mu]), np.array([ls]), -np.ones(1), np.ones(1)))
        assert np.trapezoid(p, t) == pytest.approx(1.0, abs=1e-3)


def test_sampled_actions_follow_density():
    rng = np.random.default_rng(0)
    agent = _sac(rng)
    draws = np.array([agent.act(S, rng)[0][0] for _ in range(20_000)])
    mu, ls, _, _ = agent._dist(S)
    edges = np.linspace(-1, 1, 11)
    hist = np.histogram(draws, edges)[0] / len(draws)
    for lo, hi, h in zip(edges[:-1], edges[1:], hist):
        g = np.linspace(lo, hi, 2001)
        dens = np.exp(squashed_log_prob(np.arctanh(np.clip(g, -1 + 1e-12, 1 - 1e-12))[:, None], mu, ls, -1, 1))
        assert h == pytest.approx(np.trapezoid(dens, g), abs=0.01)


def test_deterministic_action_and_small_sigma():
    rng = np.random.default_rng(0)
    agent = _sac(rng)
    a1, _ = agent.act(S, deterministic=True)
    a2, _ = agent.act(S, deterministic=True)
    assert np.array_equal(a1, a2)
    mu, _, _, _ = agent._dist(S)
    assert np.allclose(a1, np.tanh(mu))
    agent.actor.params[-1][1] = -19.0  # log-std bias -> sigma ~ 0
    agent.actor.params[-2][:, 1] = 0.0
    a3, _ = agent.act(S, rng)
    assert np.allclose(a3, a1, atol=1e-6)


def test_sample_action_box():
    rng = np.random.default_rng(0)
    agent = SacAgent(15, 11, bandit_hp(), rng)
    a, logp = sample_action(agent, np.zeros(15), rng)
    assert np.all(a >= ACTION_LOW) and np.all(a <= ACTION_HIGH) and np.isfinite(logp)


def _batch(rng, n=64, done=0.0):
    return (rng.standard_normal((n, 1)), rng.uniform(-1, 1, (n, 1)), rng.standard_normal(n),
            rng.standard_normal((n, 1)), np.full(n, done))


def test_critic_target_gamma_zero_and_done():
    rng = np.random.default_rng(0)
    b = _batch(rng)
    # a terminal batch, and a near-zero discount, both regress to the reward alone
    for kw, done in ((dict(gamma=0.5), 1.0), (dict(gamma=1e-300), 0.0)):
        agent = _sac(np.random.default_rng(1), **kw)
        batch = b[:4] + (np.full(64, done),)
        x = np.concatenate([batch[0], batch[1]], axis=-1)
        q1, q2 = agent.q1(x)[:, 0], agent.q2(x)[:, 0]
        expect = 0.25 * (np.mean((q1 - batch[2]) ** 2) + np.mean((q2 - batch[2]) ** 2))
        assert agent.critic_update(batch) == pytest.approx(expect, rel=1e-12)


def test_critic_loss_decreases():
    rng = np.random.default_rng(0)
    agent = _sac(rng)
    s, a, _, s2, d = _batch(rng, done=1.0)
    b = (s, a, s[:, 0] + a[:, 0], s2, d)
    losses = [agent.critic_update(b) for _ in range(100)]
    assert losses[-1] < 0.5 * losses[0]


def test_actor_step_leaves_critics_untouched():
    rng = np.random.default_rng(0)
    agent = _sac(rng)
    before = [p.copy() for p in agent.q1.params + agent.q2.params]
    agent.value_actor_update(_batch(rng), rng)
    assert all(np.array_equal(p, q) for p, q in zip(before, agent.q1.params + agent.q2.params))


def test_target_value_tau_one_copies():
    rng = np.random.default_rng(0)
    agent = _sac(rng, tau=1.0)
    agent.value_actor_update(_batch(rng), rng)
    assert all(np.array_equal(p, q) for p, q in zip(agent.v.params, agent.v_targ.params))


def test_twin_critic_swap_symmetry():
    b = _batch(np.random.default_rng(0))
    a1 = _sac(np.random.default_rng(1))
    a2 = _sac(np.random.default_rng(1))
    a2.q1, a2.q2 = a2.q2, a2.q1
    a2.opt["q1"], a2.opt["q2"] = a2.opt["q2"], a2.opt["q1"]
    a1.value_actor_update(b, np.random.default_rng(5))
    a2.value_actor_update(b, np.random.default_rng(5))
    assert all(np.allclose(p, q, rtol=0, atol=1e-15) for p, q in zip(a1.v.params, a2.v.params))


def test_target_norm_bounded_by_history():
    rng = np.random.default_rng(0)
    agent = _sac(rng, tau=0.3)
    hist = [np.linalg.norm(agent.v.flat())]
    for _ in range(30):
        agent.value_actor_update(_batch(rng), rng)
        hist.append(np.linalg.norm(agent.v.flat()))
        assert np.linalg.norm(agent.v_targ.flat()) <= max(hist) + 1e-12


def test_sac_bandit_converges():
    rng = np.random.default_rng(0)
    agent = _sac(rng)
    run_bandit(agent, 1500, rng)
    a, _ = agent.act(S, deterministic=True)
    assert a[0] == pytest.approx(TARGET, abs=0.1)


def test_entropy_grows_with_alpha():
    rng = np.random.default_rng(0)
    ents = {}
    for alpha in (0.0, 0.05):
        agent = _sac(np.random.default_rng(1), ent_coef=alpha)
        ents[alpha] = np.mean(run_bandit(agent, 800, np.random.default_rng(2))[-200:])
    assert ents[0.05] > ents[0.0]


# -- TD3 ---------------------------------------------------------------------

def test_td3_policy_delay_and_bandit():
    rng = np.random.default_rng(0)
    agent = Td3Agent(1, 1, bandit_hp(policy_delay=3, lr=3e-3), rng)
    run_bandit(agent, 3000, rng)
    assert agent.n_actor_updates == agent.n_updates // 3
    a, _ = agent.act(S, deterministic=True)
    assert a[0] == pytest.approx(TARGET, abs=0.1)


def test_td3_zero_noise_deterministic():
    agent = Td3Agent(1, 1, bandit_hp(noise_std=0.0), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    assert np.array_equal(agent.act(S, rng)[0], agent.act(S, rng)[0])


# -- training loop ------------------------------------------------------------

@pytest.fixture(scope="module")
def small_cfg():
    return default_config(1)


@pytest.mark.parametrize("algo", ["sac", "td3"])
def test_train_deterministic_and_round_trip(tmp_path, small_cfg, algo):
    hp = HyperParams(net_arch=(16, 16), batch_size=32, learning_starts=48, buffer_size=1000)
    runs = [train(algo, lambda: ZcmesEnv(small_cfg), hp, 120, seed=3) for _ in range(2)]
    assert repr(runs[0].curve) == repr(runs[1].curve) and len(runs[0].curve) == 5
    runs[0].save(tmp_path)
    back = TrainedAgent.load(tmp_path)
    env = ZcmesEnv(small_cfg)
    v = env.normalize(env.reset(0))
    assert np.array_equal(back.policy()(v), runs[0].policy()(v))
    assert back.config_hash == env.cfg.content_hash()
    assert (tmp_path / "curve.csv").read_text().splitlines()[0] == "step,return,critic_loss,actor_loss,entropy"


def test_train_requires_learning_starts(small_cfg):
    with pytest.raises(ValueError):
        train("sac", lambda: ZcmesEnv(small_cfg), HyperParams(learning_starts=100), 50, 0)
