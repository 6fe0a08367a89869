from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warfarin_xrl.errors import DomainError
from warfarin_xrl.nn import Adam, DenseNet, LrSchedule, load_networks, save_networks


def random_net(seed, dims=(4, 7, 6, 5, 3)):
    rng = np.random.default_rng(seed)
    ws = [rng.standard_normal((a, b)) for a, b in zip(dims, dims[1:])]
    bs = [rng.standard_normal(b) * 0.5 for b in dims[1:]]
    acts = ["relu"] * (len(dims) - 2) + ["linear"]
    return DenseNet(ws, bs, acts)


def finite_difference_check(net, x, upstream, eps=1e-5):
    _, cache = net.forward(x, cache=True)
    grads = net.backward(cache, upstream)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = np.sum(net(x) * upstream)
            p[i] = old - eps
            down = np.sum(net(x) * upstream)
            p[i] = old
            num[i] = (up - down) / (2 * eps)
        scale = max(np.max(np.abs(num)), 1e-8)
        worst = max(worst, np.max(np.abs(num - g)) / scale)
    return worst


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradients_match_finite_differences(seed):
    net = random_net(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((6, 4))
    up = rng.standard_normal((6, 3))
    assert finite_difference_check(net, x, up) < 1e-4


def test_hand_computed_linear_layer():
    net = DenseNet([np.array([[1.0, 2.0], [3.0, 4.0]])], [np.array([0.5, -1.0])], ["linear"])
    np.testing.assert_allclose(net(np.array([1.0, -1.0])), [1 - 3 + 0.5, 2 - 4 - 1.0])


def test_zero_net_and_relu():
    net = DenseNet.build(4, 3, (5,))
    for w, b in zip(net.weights, net.biases):
        w[:] = 0
        b[:] = 0
    np.testing.assert_array_equal(net(np.ones(4)), np.zeros(3))
    relu = DenseNet([np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)], ["relu", "linear"])
    np.testing.assert_array_equal(relu(np.array([-1.0, -2.0])), [0.0, 0.0])


def test_backward_zero_and_linearity():
    net = random_net(3)
    x = np.random.default_rng(0).standard_normal((5, 4))
    _, cache = net.forward(x, cache=True)
    assert all(np.all(g == 0) for g in net.backward(cache, np.zeros((5, 3))))
    up = np.random.default_rng(1).standard_normal((5, 3))
    g1 = net.backward(cache, up)
    g2 = net.backward(cache, 2.5 * up)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(b, 2.5 * a)


def test_dimension_errors():
    net = random_net(0)
    with pytest.raises(DomainError):
        net(np.ones(5))
    _, cache = net.forward(np.ones((2, 4)), cache=True)
    with pytest.raises(DomainError):
        net.backward(cache, np.ones((2, 2)))
    with pytest.raises(DomainError):
        DenseNet([np.ones((2, 3)), np.ones((4, 1))], [np.zeros(3), np.zeros(1)], ["relu", "linear"])


def test_build_shapes_and_init():
    net = DenseNet.build(4, 21, rng=np.random.default_rng(0))
    assert [w.shape for w in net.weights] == [(4, 256), (256, 256), (256, 128), (128, 64), (64, 21)]
    assert net.activations == ["relu"] * 4 + ["linear"]
    assert np.max(np.abs(net.weights[-1])) <= 0.01
    assert all(np.all(b == 0) for b in net.biases)


def test_adam_behaviour():
    w = np.array([1.0])
    opt = Adam([w])
    opt.step([w], [2 * w], 0.1)
    assert w[0] ** 2 < 1.0 and opt.step_count == 1
    before = w.copy()
    opt.step([w], [np.zeros(1)], 0.1)  # momentum still moves; fresh optimizer does not
    fresh = np.array([3.0])
    Adam([fresh]).step([fresh], [np.zeros(1)], 0.1)
    assert fresh[0] == 3.0
    frozen = np.array([1.0])
    Adam([frozen]).step([frozen], [np.array([5.0])], 0.0)
    assert frozen[0] == 1.0
    assert before.shape == w.shape


def test_lr_schedule():
    s = LrSchedule(1e-4, 0.8, 1000)
    assert s.lr_at(0) == 1e-4
    assert s.lr_at(999) == 1e-4
    assert s.lr_at(1000) == pytest.approx(8e-5)
    assert LrSchedule(1e-3, 1.0, 10).lr_at(12345) == 1e-3
    assert LrSchedule(1.0, 0.5, 2, staircase=False).lr_at(1) == pytest.approx(0.5 ** 0.5)
    with pytest.raises(DomainError):
        LrSchedule(1e-3, 0.0)


def test_checkpoint_round_trip(tmp_path):
    a, b = random_net(1), random_net(2, (4, 3, 1))
    path = tmp_path / "ck.bin"
    save_networks(path, {"actor": a, "critic": b}, {"pass": 3})
    nets, meta = load_networks(path)
    assert meta == {"pass": 3}
    x = np.random.default_rng(0).standard_normal((10, 4))
    np.testing.assert_array_equal(nets["actor"](x), a(x))
    np.testing.assert_array_equal(nets["critic"](x), b(x))
    header = path.read_bytes().split(b"\n", 1)[0]
    assert b'"version": 1' in header and b"relu" in header
