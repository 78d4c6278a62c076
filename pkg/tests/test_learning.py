import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadadapt.controllers.base import HighLevelCommand
from quadadapt.learning.env import FlightEnv, assemble_state
from quadadapt.learning.ppo import Learner, PpoConfig, gae, gaussian_logp
from quadadapt.learning.reward import TERMS, RewardWeights, blend_alpha, reward_terms, total_reward
from quadadapt.learning.train import (
    Phase1Config,
    Phase2Config,
    alpha_for,
    latent_errors,
    phase1_train,
    phase2_train,
    tail_episode_length,
)
from quadadapt.nn import PolicyNets, sigmoid
from quadadapt.sim import SimConfig

J = np.array([1e-3, 1e-3, 2e-3])


def _terms(**kw):
    base = dict(
        action=np.full(4, 0.5), prev_action=np.full(4, 0.5), c_sigma=9.81, c_sigma_des=9.81,
        torque=np.zeros(3), omega=np.zeros(3), omega_des=np.zeros(3), inertia=J, dt=0.002,
    )
    base.update(kw)
    return reward_terms(**base)


def test_reward_perfect_tracking_is_survival_only():
    assert float(total_reward(_terms())) == pytest.approx(0.002)


def test_reward_thrust_error():
    assert float(total_reward(_terms(c_sigma=10.81))) == pytest.approx(0.002 - 1.0)


def test_reward_smoothness_and_torque_terms():
    t = _terms(action=np.array([0.6, 0.5, 0.5, 0.5]), torque=np.array([0.0, 0.0, 3e-3]))
    assert float(t["smooth"]) == pytest.approx(-0.1)
    assert float(t["torque"]) == pytest.approx(-3e-3)


def test_reward_angvel_variant_and_exclusion():
    t = _terms(omega=np.array([0.0, 0.0, 0.5]), rate_term="angvel")
    assert float(t["torque"]) == pytest.approx(-0.5)
    assert float(total_reward(t, exclude=("torque",))) == pytest.approx(0.002)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=11, max_size=11), st.lists(st.floats(0, 3), min_size=4, max_size=4))
def test_reward_terms_reconstruct_total(vals, w):
    t = _terms(
        action=sigmoid(np.array(vals[:4])), c_sigma=9.81 + vals[4], torque=np.array(vals[5:8]) * 1e-3, omega_des=np.array(vals[8:11])
    )
    weights = RewardWeights(*w)
    assert float(total_reward(t, weights)) == pytest.approx(sum(getattr(weights, k) * float(t[k]) for k in TERMS), abs=1e-12)
    assert all(float(t[k]) <= 0 for k in ("smooth", "thrust", "torque"))


def test_blend_schedule():
    assert float(blend_alpha(0)) == 1.0
    assert float(blend_alpha(1000)) == pytest.approx(np.exp(-1.0))
    assert float(blend_alpha(1000)) == pytest.approx(0.3679, abs=1e-4)
    a = blend_alpha(np.arange(100))
    assert np.all(np.diff(a) < 0)
    np.testing.assert_allclose(a, np.exp(-0.001 * np.arange(100)), rtol=0, atol=0)
    assert alpha_for("il", 500) == 1.0 and alpha_for("rl", 0) == 0.0
    for e in range(0, 3000, 250):
        assert alpha_for("il_rl", e) == np.exp(-0.001 * e)


def test_gae_lambda_one_is_monte_carlo():
    r = np.array([[1.0], [2.0], [3.0]])
    v = np.array([[0.5], [0.2], [0.1]])
    gamma = 0.9
    no = np.zeros((3, 1), dtype=bool)
    last = np.array([4.0])
    adv, ret = gae(r, v, no, no, last, gamma, 1.0)
    mc = [1 + gamma * 2 + gamma**2 * 3 + gamma**3 * 4, 2 + gamma * 3 + gamma**2 * 4, 3 + gamma * 4]
    np.testing.assert_allclose(adv[:, 0], np.array(mc) - v[:, 0], rtol=1e-12)
    np.testing.assert_allclose(ret[:, 0], mc, rtol=1e-12)
    done = np.array([[False], [False], [True]])
    adv, _ = gae(r, v, done, no, last, gamma, 1.0)
    np.testing.assert_allclose(adv[2, 0], 3 - 0.1)


def test_gae_truncation_bootstraps():
    r = np.array([[1.0]])
    v = np.array([[2.0]])
    t = np.array([[True]])
    adv, _ = gae(r, v, t, t, np.array([100.0]), 0.5, 0.95)
    assert adv[0, 0] == pytest.approx(1.0 + 0.5 * 2.0 - 2.0)


def _batch(nets, rng, B=64, adv=None):
    x = rng.standard_normal((B, 8))
    e = rng.standard_normal((B, 35)) * 0.3
    learner = Learner(nets, PpoConfig(minibatch=B, epochs=1))
    mu, _, u = learner.act(x, e, rng)
    return learner, {
        "x_norm": x, "e_norm": e, "u": u, "logp": gaussian_logp(u, mu, nets.log_std),
        "expert": rng.uniform(0.3, 0.7, (B, 4)), "adv": np.zeros(B) if adv is None else adv, "ret": rng.standard_normal(B),
    }


def test_zero_advantage_leaves_policy_unchanged():
    rng = np.random.default_rng(0)
    nets = PolicyNets(seed=0, policy_hidden=(16,), encoder_hidden=(8,))
    learner, mb = _batch(nets, rng)
    before = [p.copy() for p in nets.policy.params] + [nets.log_std.copy()]
    learner.update(mb, alpha=0.0, rng=rng)
    after = list(nets.policy.params) + [nets.log_std]
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


def test_clipped_sample_contributes_no_gradient():
    rng = np.random.default_rng(1)
    nets = PolicyNets(seed=1, policy_hidden=(16,), encoder_hidden=(8,))
    learner, mb = _batch(nets, rng, B=1, adv=np.array([1.0]))
    mb["logp"] = mb["logp"] - np.log(1.5)  # ratio = 1.5 > 1 + clip
    stats = learner.loss_and_grad(mb, alpha=0.0)
    assert stats["clip_frac"] == 1.0
    for g in nets.policy.grads:
        np.testing.assert_array_equal(g, 0.0)
    np.testing.assert_array_equal(learner.log_std_grad, 0.0)
    mb["logp"] = mb["logp"] + np.log(1.5) - np.log(1.1)  # ratio inside the band
    learner.loss_and_grad(mb, alpha=0.0)
    assert any(np.any(g != 0) for g in nets.policy.grads)


def test_blended_gradient_uses_matched_norms():
    rng = np.random.default_rng(2)
    nets = PolicyNets(seed=2, policy_hidden=(16,), encoder_hidden=(8,))
    learner, mb = _batch(nets, rng, adv=rng.standard_normal(64))
    stats = learner.loss_and_grad(mb, alpha=0.5)
    assert stats["grad_norm_il"] > 0 and stats["grad_norm_rl"] > 0
    blended = [g.copy() for g in nets.policy.grads]
    learner.loss_and_grad(mb, alpha=0.0)
    rl = [g.copy() for g in nets.policy.grads]
    learner.loss_and_grad(mb, alpha=1.0)
    il = [g.copy() for g in nets.policy.grads]
    scale = stats["grad_norm_rl"] / stats["grad_norm_il"]
    for b, r, i in zip(blended, rl, il):
        np.testing.assert_allclose(b, 0.5 * r + 0.5 * scale * i, rtol=1e-9, atol=1e-15)


def test_imitation_loss_decreases_on_fixed_dataset():
    rng = np.random.default_rng(3)
    nets = PolicyNets(seed=3, policy_hidden=(32,), encoder_hidden=(8,))
    learner, mb = _batch(nets, rng, B=256)
    mb["expert"] = sigmoid(mb["x_norm"][:, :4] * 0.5)
    losses = [learner.update(mb, alpha=1.0, rng=rng)["il_loss"] for _ in range(200)]
    smooth = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) < 0)


def test_bias_only_adaptation_optimum_is_mean():
    from quadadapt.nn import Sgd

    nets = PolicyNets(seed=4, policy_hidden=(8,), encoder_hidden=(8,))
    phi = nets.adaptation
    for p in phi.params:
        p[...] = 0.0
    head_bias = phi.layers[-1].b
    z = np.random.default_rng(4).standard_normal((16, 8)) + np.arange(8)
    w = np.random.default_rng(5).standard_normal((16, 100, 12))
    # the bias gradient is (b - mean) / 4, so this step halves the error
    opt = Sgd([head_bias], lr=2.0)
    for _ in range(60):
        phi.zero_grad()
        diff = phi.forward(w) - z
        phi.backward(2 * diff / diff.size)
        opt.step([phi.layers[-1].grads[1]])
    np.testing.assert_allclose(head_bias, z.mean(0), atol=1e-9)


def test_env_state_assembly_and_expert_bounds():
    env = FlightEnv(4, c_range=(0.4, 0.6), seed=0)
    obs = env.observe()
    assert obs["x_norm"].shape == (4, 8) and obs["e_norm"].shape == (4, 35)
    assert np.all((obs["expert"] >= 0) & (obs["expert"] <= 1))
    # at a level hover start the expert asks for hover speed with effectiveness inverted
    hover = env.params.hover_speed()[:, None] / env.params.motor_effectiveness
    np.testing.assert_allclose(obs["expert"], np.minimum(hover / env.a_max[:, None], 1.0), rtol=1e-9)
    x = assemble_state(np.full(2, 9.81), np.zeros((2, 3)), HighLevelCommand.hover((2,)))
    np.testing.assert_array_equal(x[0], [9.81, 0, 0, 0, 9.81, 0, 0, 0])


def test_env_expert_actions_survive_and_score_survival():
    env = FlightEnv(8, c_range=(0.4, 0.6), seed=1, config=SimConfig(episode_max=1.0))
    total, crashes = 0.0, 0
    for _ in range(500):
        obs = env.observe()
        r, done, trunc, info = env.step(obs["expert"], obs["cmd"])
        crashes += int(info["crashed"].sum())
        total += float(np.mean(info["terms"]["survive"]))
    assert crashes == 0
    assert total == pytest.approx(500 * 0.002)


def test_env_is_deterministic():
    def run():
        env = FlightEnv(3, seed=5)
        out = []
        for _ in range(50):
            obs = env.observe()
            r, *_ = env.step(obs["expert"] * 0.98, obs["cmd"])
            out.append(r)
        return np.array(out)

    np.testing.assert_array_equal(run(), run())


def test_tail_episode_length_weights_by_count():
    curves = [
        {"steps": 10, "episodes_ended": 4, "episode_length": 0.1},
        {"steps": 95, "episodes_ended": 1, "episode_length": 0.5},
        {"steps": 100, "episodes_ended": 3, "episode_length": 1.0},
    ]
    assert tail_episode_length(curves) == pytest.approx((0.5 + 3.0) / 4)
    assert np.isnan(tail_episode_length([]))


def test_phase_one_never_exceeds_the_budget():
    from quadadapt.learning.ppo import PpoConfig

    cfg = Phase1Config(total_steps=3 * 8 * 16 - 1, n_envs=8, ppo=PpoConfig(rollout=16, minibatch=64, epochs=1))
    _, curves = phase1_train(cfg)
    assert len(curves) == 2 and curves[-1]["steps"] == 2 * 8 * 16


def test_phase_one_and_two_smoke(tmp_path):
    from quadadapt.learning.ppo import PpoConfig

    cfg = Phase1Config(total_steps=2 * 8 * 16, n_envs=8, ppo=PpoConfig(rollout=16, minibatch=64, epochs=1))
    nets, curves = phase1_train(cfg)
    assert len(curves) == 2 and curves[0]["alpha"] == 1.0
    assert nets.meta["phase"] == 1 and len(nets.meta["state_center"]) == 8
    cfg2 = Phase2Config(iterations=2, n_envs=4, rollout_steps=120, val_envs=2, val_steps=120, batch=32)
    nets, rows = phase2_train(nets, cfg2)
    assert len(rows) == 2 and rows[-1]["val_zero_mse"] > 0
    assert nets.meta["phase"] == 2
    path = tmp_path / "p.npz"
    nets.save(path, nets.meta)
    back, meta = PolicyNets.load(path)
    assert meta["phase"] == 2
    w = np.zeros((3, 100, 12))
    np.testing.assert_array_equal(back.adaptation.forward(w), nets.adaptation.forward(w))
    mse, zero = latent_errors(nets, w, np.zeros((3, 8)))
    assert zero == 0.0 and mse >= 0


def test_invalid_mode():
    with pytest.raises(ValueError):
        Phase1Config(mode="bc")
