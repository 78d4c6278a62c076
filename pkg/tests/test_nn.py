import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import grad_check, naive_conv1d
from quadadapt.nn import (
    ContractError,
    Conv1d,
    Conv1dStack,
    Linear,
    Mlp,
    PolicyNets,
    Sequential,
    Sigmoid,
    conv_out_len,
    sigmoid,
)
from quadadapt.nn.optim import Adam, Sgd


@pytest.mark.parametrize("seed", range(5))
def test_mlp_gradient(seed):
    rng = np.random.default_rng(seed)
    net = Mlp([5, 7, 6, 3], "tanh", output="sigmoid", rng=rng)
    assert grad_check(net, rng.standard_normal((4, 5)), rng) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_conv_stack_gradient(seed):
    rng = np.random.default_rng(seed)
    net = Conv1dStack(3, 20, 2, spec=((4, 4, 4, 2), (4, 3, 3, 1)), rng=rng)
    assert grad_check(net, rng.standard_normal((2, 20, 3)), rng) < 1e-4


def test_forward_requires_matching_width():
    with pytest.raises(ContractError):
        Linear(3, 2).forward(np.zeros((1, 4)))
    with pytest.raises(ContractError):
        Conv1d(2, 2, 3).forward(np.zeros((1, 3, 10)))


def test_backward_without_forward():
    with pytest.raises(ContractError):
        Linear(3, 2).backward(np.zeros((1, 2)))
    net = Mlp([3, 4, 2])
    net.forward(np.zeros((1, 3)))
    net.backward(np.zeros((1, 2)))
    with pytest.raises(ContractError):
        net.backward(np.zeros((1, 2)))


def test_constant_net_squashes_to_midrange():
    net = Mlp([4, 2], output="sigmoid")
    for p in net.params:
        p[...] = 0.0
    out = net.forward(np.ones((1, 4)))
    np.testing.assert_array_equal(out, 0.5)
    assert sigmoid(np.array(0.0)) == 0.5


def test_identity_layer():
    x = np.random.default_rng(0).standard_normal((3, 6))
    np.testing.assert_array_equal(Linear.identity(6).forward(x), x)


def test_adaptation_shapes_and_determinism():
    net = Conv1dStack(12, 100, 8, rng=np.random.default_rng(0))
    assert net.time_steps == 16
    assert [conv_out_len(100, 8, 4), conv_out_len(24, 5, 1), conv_out_len(20, 5, 1)] == [24, 20, 16]
    assert net.layers[-1].W.shape == (16 * 32, 8)
    x = np.random.default_rng(1).standard_normal((5, 100, 12))
    a = net.forward(x)
    b = net.forward(x)
    assert a.shape == (5, 8)
    np.testing.assert_array_equal(a, b)


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(2)
    net = Mlp([3, 5, 2], rng=rng)
    net.zero_grad()
    net.forward(rng.standard_normal((4, 3)))
    net.backward(np.zeros((4, 2)))
    for g in net.grads:
        np.testing.assert_array_equal(g, 0.0)


def test_gradient_is_linear_in_loss_scale():
    rng = np.random.default_rng(3)
    net = Mlp([3, 5, 2], rng=rng)
    x = rng.standard_normal((4, 3))
    up = rng.standard_normal((4, 2))
    net.zero_grad()
    net.forward(x)
    net.backward(up)
    g1 = [g.copy() for g in net.grads]
    net.zero_grad()
    net.forward(x)
    net.backward(2.5 * up)
    for a, b in zip(g1, net.grads):
        np.testing.assert_allclose(b, 2.5 * a, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(2, 5), st.integers(1, 3), st.integers(5, 30), st.integers(0, 1000))
def test_conv_matches_naive_reference(c_in, c_out, k, stride, length, seed):
    if length < k:
        length = k
    rng = np.random.default_rng(seed)
    conv = Conv1d(c_in, c_out, k, stride, rng)
    x = rng.standard_normal((2, c_in, length))
    out = conv.forward(x)
    assert out.shape[2] == conv_out_len(length, k, stride)
    np.testing.assert_allclose(out, naive_conv1d(x, conv.W, conv.b, stride), rtol=1e-12, atol=1e-12)


def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, -2.0])
    opt = Adam([p], lr=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_first_step():
    p = np.zeros(3)
    g = np.array([0.5, -2.0, 1e-3])
    Adam([p], lr=0.01, eps=1e-8).step([g])
    np.testing.assert_allclose(p, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-9)


def test_adam_minimizes_quadratic_bowl():
    rng = np.random.default_rng(4)
    A = np.diag(rng.uniform(0.5, 5.0, 4))
    target = rng.standard_normal(4)
    x = np.zeros(4)
    opt = Adam([x], lr=0.05)
    for i in range(5000):
        r = x - target
        if 0.5 * r @ A @ r < 1e-6:
            break
        opt.step([A @ r])
    assert 0.5 * (x - target) @ A @ (x - target) < 1e-6


def test_adam_grad_clipping():
    p = np.zeros(2)
    opt = Adam([p], lr=1.0, max_grad_norm=1.0)
    opt.step([np.array([30.0, 40.0])])
    np.testing.assert_allclose(p, [-1.0, -1.0], rtol=1e-6)


def test_sgd_step():
    p = np.ones(2)
    Sgd([p], lr=0.5).step([np.array([1.0, -1.0])])
    np.testing.assert_array_equal(p, [0.5, 1.5])


def test_training_is_bit_reproducible():
    def run():
        rng = np.random.default_rng(7)
        net = Mlp([3, 8, 1], rng=np.random.default_rng(0))
        opt = Adam(net.params, lr=1e-2)
        for _ in range(50):
            x = rng.standard_normal((16, 3))
            y = np.sin(x.sum(1, keepdims=True))
            net.zero_grad()
            out = net.forward(x)
            net.backward(2 * (out - y) / len(x))
            opt.step(net.grads)
        return [p.copy() for p in net.params]

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    nets = PolicyNets(seed=3, policy_hidden=(16,), encoder_hidden=(8,))
    nets.log_std[...] = [-0.5, -1, -1.5, -2]
    path = tmp_path / "ck.npz"
    nets.save(path, {"note": "x"})
    back, meta = PolicyNets.load(path)
    assert meta["note"] == "x"
    for name, net in nets.nets().items():
        for a, b in zip(net.params, back.nets()[name].params):
            np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.log_std, nets.log_std)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, a=np.zeros(2))
    with pytest.raises(ValueError):
        PolicyNets.load(path)


def test_sequential_collects_params():
    s = Sequential([Linear(2, 3), Sigmoid(), Linear(3, 1)])
    assert len(s.params) == 4 and len(s.grads) == 4
