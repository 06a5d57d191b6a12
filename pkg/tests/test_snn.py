import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccsrp.errors import IncompatibleShapes, ShapeMismatch, StaleTrace
from ccsrp.io import load_network, network_bytes, save_network
from ccsrp.snn import (LayerSpec, LifConfig, backward, cross_entropy, forward, init_network,
                       lif_step)

from helpers import DESK_SHAPE, DESK_SPECS, finite_difference_check, random_small_net

CFG = LifConfig()


def test_init_is_deterministic():
    a = init_network(DESK_SPECS, DESK_SHAPE, seed=3)
    b = init_network(DESK_SPECS, DESK_SHAPE, seed=3)
    for p, q in zip(a.params(), b.params()):
        assert p.dtype == np.float32
        assert p.tobytes() == q.tobytes()


def test_dense_shapes():
    net = init_network([LayerSpec.dense(4, 2, spiking=False)], (4, 1, 1))
    assert net.layers[0].weight.shape == (2, 4)
    assert net.layers[0].bias.shape == (2,)
    assert not net.layers[0].bias.any()


def test_he_std_sample_statistics():
    # 12500 x 8 = 10^5 samples, fan_in 8 -> std sqrt(2/8) = 0.5
    net = init_network([LayerSpec.dense(8, 12500, spiking=False)], (8, 1, 1), seed=11)
    w = net.layers[0].weight
    assert w.size == 100_000
    assert abs(w.std() - 0.5) < 0.05 * 0.5
    assert abs(w.mean()) < 0.01


def test_incompatible_shapes():
    with pytest.raises(IncompatibleShapes):
        init_network([LayerSpec.conv(1, 4, 3), LayerSpec.conv(3, 4, 3),
                      LayerSpec.dense(4, 2, spiking=False)], (1, 8, 8))
    with pytest.raises(IncompatibleShapes):
        init_network([LayerSpec.conv(1, 4, 3), LayerSpec.dense(10, 2, spiking=False)], (1, 8, 8))
    with pytest.raises(IncompatibleShapes):
        # the non-spiking readout must be last
        init_network([LayerSpec.dense(4, 3, spiking=False), LayerSpec.dense(3, 2, spiking=False)],
                     (4, 1, 1))


class TestLifStep:
    def test_below_threshold(self):
        v, s = lif_step(np.float32([0.0]), np.float32([0.5]), CFG)
        assert v[0] == pytest.approx(0.5) and s[0] == 0

    def test_threshold_crossing(self):
        v, s = lif_step(np.float32([0.8]), np.float32([0.5]), CFG)
        assert s[0] == 1 and v[0] == 0.0

    def test_pure_leak(self):
        v = np.array([0.5])
        expected = [0.45, 0.405, 0.3645]
        for e in expected:
            v, s = lif_step(v, np.zeros(1), CFG)
            assert v[0] == pytest.approx(e)
            assert s[0] == 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            lif_step(np.zeros(3), np.zeros(2), CFG)

    @given(arrays(np.float64, 16, elements=st.floats(-3, 3)),
           arrays(np.float64, 16, elements=st.floats(-3, 3)))
    def test_spikes_binary_and_reset_exact(self, v, cur):
        v_next, s = lif_step(v, cur, CFG)
        assert set(np.unique(s)) <= {0.0, 1.0}
        assert np.all(v_next[s == 1] == 0)
        np.testing.assert_allclose(v_next[s == 0], (0.9 * v + cur)[s == 0])


def test_zero_weights_give_zero_logits(rng):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=0)
    for p in net.params():
        p[...] = 0
    logits, _ = forward(net, rng.random((5,) + DESK_SHAPE))
    assert not logits.any()


def test_single_step_matches_reference(rng):
    lif = LifConfig(timesteps=1)
    specs = [LayerSpec.dense(6, 5), LayerSpec.dense(5, 3, spiking=False)]
    net = init_network(specs, (6, 1, 1), lif, seed=2)
    net.layers[0].bias[:] = 0.3
    x = rng.random((7, 6, 1, 1)).astype(np.float32)
    # one-step ANN with Heaviside hidden units
    h = (x.reshape(7, 6) @ net.layers[0].weight.T + net.layers[0].bias >= 1.0).astype(np.float32)
    ref = h @ net.layers[1].weight.T + net.layers[1].bias
    logits, _ = forward(net, x)
    np.testing.assert_allclose(logits, ref, rtol=1e-6, atol=1e-6)


def test_forward_is_pure(rng):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=4)
    x = rng.random((4,) + DESK_SHAPE)
    a, _ = forward(net, x)
    b, _ = forward(net, x)
    assert a.tobytes() == b.tobytes()


def test_trace_spikes_and_reset(rng):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=4)
    for layer in net.layers:
        layer.weight *= 3
    _, tr = forward(net, rng.random((3,) + DESK_SHAPE), record=True)
    n_spikes = 0
    for lt in tr.layers[:-1]:
        assert set(np.unique(lt.spikes)) <= {0.0, 1.0}
        n_spikes += lt.spikes.sum()
        # membrane after reset is v_pre * (1 - s): exactly zero where spiking
        assert np.all((lt.v_pre * (1 - lt.spikes))[lt.spikes == 1] == 0)
    assert n_spikes > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_logits_bounded_and_finite(seed, scale):
    rng = np.random.default_rng(seed)
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=seed)
    for layer in net.layers:
        layer.weight[...] = np.clip(layer.weight * scale, -10, 10)
    x = rng.random((2,) + DESK_SHAPE)
    logits, tr = forward(net, x, record=True)
    assert np.all(np.isfinite(logits))
    # readout current per step is at most sum |w| * 1 + |b| (spikes are 0/1)
    ro = net.layers[-1]
    bound = np.abs(ro.weight).sum(axis=1) + np.abs(ro.bias)
    assert np.all(np.abs(logits) <= bound + 1e-4)


def test_soft_mode_is_continuous(rng):
    net, x, _ = random_small_net(5)
    a, _ = forward(net, x, mode="soft")
    d = rng.standard_normal(x.shape) * 1e-4
    b, _ = forward(net, x + d, mode="soft")
    assert np.abs(a - b).max() < 1e-2


def test_soft_gradient_matches_finite_differences():
    for seed in range(3):
        net, x, y = random_small_net(seed)
        logits, tr = forward(net, x, record=True, mode="soft")
        _, g = cross_entropy(logits, y, reduction="sum")
        grads = backward(net, tr, g)
        worst, checked, skipped = finite_difference_check(net, x, y, grads.flat(), grads.input)
        assert worst < 1e-3
        assert skipped <= 0.25 * (checked + skipped)


def test_zero_upstream_gives_zero_grads(rng):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=1)
    x = rng.random((2,) + DESK_SHAPE)
    _, tr = forward(net, x, record=True)
    grads = backward(net, tr, np.zeros((2, 4), np.float32))
    assert all(not g.any() for g in grads.flat())
    assert not grads.input.any()


def test_duplicate_example_doubles_gradient(rng):
    net, x, y = random_small_net(8)
    x1, y1 = x[:1], y[:1]
    logits1, tr = forward(net, x1, record=True, mode="soft")
    g1 = backward(net, tr, cross_entropy(logits1, y1, "sum")[1])
    x2, y2 = np.concatenate([x1, x1]), np.concatenate([y1, y1])
    logits2, tr2 = forward(net, x2, record=True, mode="soft")
    g2 = backward(net, tr2, cross_entropy(logits2, y2, "sum")[1])
    for a, b in zip(g1.flat(), g2.flat()):
        np.testing.assert_allclose(2 * a, b, rtol=1e-10, atol=1e-12)


def test_spiking_mode_uses_triangular_surrogate():
    # one dense spiking neuron feeding the readout, T=1
    net = init_network([LayerSpec.dense(1, 1), LayerSpec.dense(1, 1, spiking=False)], (1, 1, 1),
                       LifConfig(timesteps=1), seed=0)
    net.layers[0].weight[:] = 1.0
    net.layers[1].weight[:] = 1.0
    x = np.full((1, 1, 1, 1), 0.75, np.float32)
    _, tr = forward(net, x, record=True)
    g = backward(net, tr, np.ones((1, 1), np.float32))
    # v = 0.75, surrogate = max(0, 1 - |0.75 - 1|) = 0.75; no spike so the reset term is 1
    # d logit / dx = w2 * (g(v) * w1) + 0 = 0.75
    assert g.input.item() == pytest.approx(0.75)


def test_stale_trace_rejected(rng):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=1)
    x = rng.random((2,) + DESK_SHAPE)
    _, tr = forward(net, x, record=True)
    net.bump_version()
    with pytest.raises(StaleTrace):
        backward(net, tr, np.ones((2, 4), np.float32))
    other = init_network(DESK_SPECS, DESK_SHAPE, seed=1)
    with pytest.raises(StaleTrace):
        backward(other, tr, np.ones((2, 4), np.float32))


def test_batch_shape_checked():
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=1)
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((2, 1, 10, 10)))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = init_network(DESK_SPECS, DESK_SHAPE, LifConfig(decay=0.8, timesteps=3), seed=9)
    save_network(tmp_path / "m.ckpt", net)
    back = load_network(tmp_path / "m.ckpt")
    assert back.specs == net.specs and back.lif == net.lif and back.input_shape == net.input_shape
    for p, q in zip(net.params(), back.params()):
        assert p.tobytes() == q.tobytes()
    assert network_bytes(back) == network_bytes(net)
    raw = (tmp_path / "m.ckpt").read_bytes()
    n = int.from_bytes(raw[:8], "little")
    assert raw[8:8 + n].startswith(b"{")
