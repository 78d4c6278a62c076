import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadadapt.controllers.base import HighLevelCommand
from quadadapt.harness.episode import run_batch
from quadadapt.learning.env import STATE_CENTER, STATE_SCALE, assemble_state
from quadadapt.learning.train import checkpoint_meta
from quadadapt.nn import PolicyNets
from quadadapt.policy_runtime import (
    LearnedLowLevel,
    Normalization,
    StateActionHistory,
    encode,
    flag_components,
    latent_shift,
    learned_controller,
    load_controller,
    policy_step,
    teacher_step,
    write_latent_trace,
)
from quadadapt.sim import SimConfig, Simulator
from quadadapt.trajectory import hover_reference
from quadadapt.vehicle import EnvNormalizer, ParamRanges, env_vector, nominal_vehicle

NOM = nominal_vehicle(ParamRanges.training())


def small_nets(seed=0):
    nets = PolicyNets(seed=seed, policy_hidden=(16,), encoder_hidden=(8,))
    meta = checkpoint_meta(EnvNormalizer.from_ranges(ParamRanges.training()))
    return nets, meta


def test_history_is_zero_initialized_and_oldest_first():
    h = StateActionHistory((), length=5, state_dim=2, action_dim=1)
    np.testing.assert_array_equal(h.window(), np.zeros((5, 3)))
    for k in range(1, 8):
        h.push(np.array([k, k]), np.array([k]))
    w = h.window()
    np.testing.assert_array_equal(w[:, 2], [3, 4, 5, 6, 7])
    assert w.shape == (5, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 250))
def test_history_window_matches_naive_list(n):
    h = StateActionHistory((2,), length=100)
    rows = []
    rng = np.random.default_rng(n)
    for _ in range(n):
        x, a = rng.standard_normal((2, 8)), rng.uniform(size=(2, 4))
        h.push(x, a)
        rows.append(np.concatenate([x, a], -1))
    expected = np.zeros((100, 2, 12))
    tail = rows[-100:]
    if tail:
        expected[100 - len(tail) :] = np.array(tail)
    np.testing.assert_array_equal(h.window(), expected.transpose(1, 0, 2))


def test_history_clear_selected_episode():
    h = StateActionHistory((3,), length=4)
    h.push(np.ones((3, 8)), np.ones((3, 4)))
    h.clear(np.array([1]))
    w = h.window()
    assert w[1].sum() == 0 and w[0].sum() == 12


def test_first_student_action_is_deterministic():
    nets, meta = small_nets()
    norm = Normalization(meta)
    obs = Simulator(NOM).observe()
    outs = [policy_step(HighLevelCommand.hover(), obs, StateActionHistory(), nets, norm, NOM.max_motor_speed)[0] for _ in range(2)]
    np.testing.assert_array_equal(outs[0], outs[1])
    assert np.all((outs[0] >= 0) & (outs[0] <= NOM.max_motor_speed))


def test_teacher_equals_student_when_phi_matches_mu():
    nets, meta = small_nets(1)
    norm = Normalization(meta)
    e = env_vector(NOM)
    z = encode(nets, norm.env(e))
    head = nets.adaptation.layers[-1]
    head.W[...] = 0.0
    head.b[...] = z
    obs = Simulator(NOM).observe()
    cmd = HighLevelCommand(np.asarray(10.0), np.array([0.1, -0.2, 0.0]))
    s, z_hat, _ = policy_step(cmd, obs, StateActionHistory(), nets, norm, NOM.max_motor_speed)
    t, z_t, _ = teacher_step(cmd, obs, e, nets, norm, NOM.max_motor_speed)
    np.testing.assert_allclose(z_hat, z_t, rtol=0, atol=1e-15)
    np.testing.assert_allclose(s, t, rtol=1e-14)
    assert z_t.shape == (8,)


def test_normalization_uses_checkpoint_constants():
    _, meta = small_nets()
    norm = Normalization(meta)
    x = assemble_state(np.asarray(9.81), np.zeros(3), HighLevelCommand.hover())
    np.testing.assert_allclose(norm.state(x), (x - STATE_CENTER) / STATE_SCALE)


def test_learned_controller_modes_and_batch_run():
    nets, meta = small_nets(2)
    for mode in ("student", "teacher"):
        m = run_batch(learned_controller(nets, meta, mode), NOM, hover_reference(), SimConfig(episode_max=0.1))
        assert np.isfinite(float(m["pos_rmse"]))
    with pytest.raises(ValueError):
        LearnedLowLevel(nets, meta, "oracle")


def test_history_memory_is_bounded():
    nets, meta = small_nets(3)
    ctl = learned_controller(nets, meta, "student")
    run_batch(ctl, NOM, hover_reference(), SimConfig(episode_max=0.5))
    assert ctl.low.history.data.shape == (100, 12)


def test_load_controller_roundtrip(tmp_path):
    nets, meta = small_nets(4)
    path = tmp_path / "p.npz"
    nets.save(path, meta)
    a = run_batch(learned_controller(nets, meta), NOM, hover_reference(), SimConfig(episode_max=0.1))
    b = run_batch(load_controller(path), NOM, hover_reference(), SimConfig(episode_max=0.1))
    assert float(a["pos_rmse"]) == float(b["pos_rmse"])


def test_latent_shift_and_flags():
    z = np.ones((400, 3))
    z[200:, 1] = 1.5  # sustained 50% shift
    z[200:, 2] = 1.05  # below threshold
    shift = latent_shift(z, 200, 50, lag=10)
    np.testing.assert_allclose(shift, [0.0, 0.5, 0.05])
    np.testing.assert_array_equal(flag_components(z, 200, 50, 0.10, lag=10), [1])
    # near-zero pre-event means use the floor
    z0 = np.zeros((100, 1))
    z0[50:] = 0.01
    assert latent_shift(z0, 50, 20)[0] == pytest.approx(10.0)


def test_latent_trace_export(tmp_path):
    nets, meta = small_nets(5)
    ctl = learned_controller(nets, meta, "student", record=True)
    run_batch(ctl, NOM, hover_reference(), SimConfig(episode_max=0.02))
    path = tmp_path / "z.csv"
    write_latent_trace(path, ctl.low, 0.002)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["t", "x0"] and lines[0].endswith("z7")
    assert len(lines) == 1 + 10
