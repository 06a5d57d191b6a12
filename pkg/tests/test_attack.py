import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ccsrp.attack as attack_mod
from ccsrp.attack import (AdvDataset, AttackConfig, generate_adv_dataset, load_adv_dataset,
                          pgd_attack, robust_accuracy, save_adv_dataset)
from ccsrp.data import synth_blobs
from ccsrp.errors import ConfigInvalid
from ccsrp.pruning import all_ones_mask
from ccsrp.snn import LayerSpec, accuracy, cross_entropy, forward, init_network

from helpers import DESK_SHAPE, DESK_SPECS


def _readout_toy():
    net = init_network([LayerSpec.dense(1, 2, spiking=False)], (1, 1, 1))
    net.layers[0].weight[:] = [[-1.0], [1.0]]
    return net


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        AttackConfig(epsilon=0.01, alpha=0.02)
    with pytest.raises(ConfigInvalid):
        AttackConfig(steps=0)
    AttackConfig(epsilon=0.0, alpha=2 / 255)
    assert AttackConfig.eval().steps == 40 and not AttackConfig.eval().random_start
    assert AttackConfig.train().steps == 10 and AttackConfig.train().random_start


def test_scalar_toy_projection():
    # the loss of class 0 grows with x, so every step moves up until the ball edge
    net = _readout_toy()
    x = np.full((1, 1, 1, 1), 0.5, np.float32)
    cfg = AttackConfig(0.1, 0.04, 3, random_start=False)
    out = pgd_attack(net, x, np.array([0]), cfg)
    assert out.item() == pytest.approx(0.6, abs=1e-6)


def test_zero_weights_leave_input(rng):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=0)
    for p in net.params():
        p[...] = 0
    x = rng.random((4,) + DESK_SHAPE).astype(np.float32)
    y = np.arange(4)
    out = pgd_attack(net, x, y, AttackConfig(random_start=False))
    assert out.tobytes() == x.tobytes()
    out = pgd_attack(net, x, y, AttackConfig(random_start=True), rng)
    assert np.abs(out - x).max() <= 8 / 255 + 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.3), st.integers(1, 4), st.booleans())
def test_box_and_ball_invariant(seed, eps, steps, random_start):
    rng = np.random.default_rng(seed)
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=seed % 97)
    x = rng.random((3,) + DESK_SHAPE).astype(np.float32)
    x[0] = 0.0
    x[1] = 1.0
    cfg = AttackConfig(eps, eps / 3 if eps > 0 else 0.01, steps, random_start)
    out = pgd_attack(net, x, rng.integers(0, 4, 3), cfg, rng)
    assert np.all(np.abs(out - x) <= eps + 1e-6)
    assert out.min() >= 0 and out.max() <= 1


def test_random_start_needs_rng():
    net = _readout_toy()
    with pytest.raises(ConfigInvalid):
        pgd_attack(net, np.zeros((1, 1, 1, 1)), np.array([0]), AttackConfig())


def test_attack_increases_loss(plain_net, desk_data):
    _, test = desk_data
    x, y = test.images, test.labels
    adv = pgd_attack(plain_net, x, y, AttackConfig.eval())
    clean = cross_entropy(forward(plain_net, x)[0], y, reduction="none")[0]
    after = cross_entropy(forward(plain_net, adv)[0], y, reduction="none")[0]
    assert (after >= clean).mean() >= 0.9


def test_monotone_budget(plain_net, desk_data):
    train, _ = desk_data
    x, y = train.images[:256], train.labels[:256]
    prev = -np.inf
    for steps in (1, 5, 20):
        adv = pgd_attack(plain_net, x, y, AttackConfig(steps=steps, random_start=False))
        loss = cross_entropy(forward(plain_net, adv)[0], y)[0]
        assert loss >= prev - 1e-6
        prev = loss


def test_tie_break_gives_class_zero():
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=0)
    for p in net.params():
        p[...] = 0
    ds = synth_blobs(num_classes=2, per_class=10, img_size=12, seed=0)
    adv = generate_adv_dataset(net, ds, 2, 0.05, 0.1, AttackConfig(random_start=False),
                               np.random.default_rng(0))
    assert robust_accuracy(net, adv) == 0.5


def test_zero_budget_is_clean_accuracy(plain_net, desk_data):
    _, test = desk_data
    cfg = AttackConfig(0.0, 2 / 255, 5, random_start=True)
    adv = generate_adv_dataset(plain_net, test, 3, 0.05, 0.1, cfg, np.random.default_rng(1))
    assert adv.examples.tobytes() == test.images.tobytes()
    assert robust_accuracy(plain_net, adv) == accuracy(plain_net, test.images, test.labels)


def test_single_subnet_without_mutation_is_plain_pgd(plain_net, desk_data):
    _, test = desk_data
    ds = test.subset(np.arange(40))
    cfg = AttackConfig(steps=5, random_start=False)
    adv = generate_adv_dataset(plain_net, ds, 1, 0.0, 0.1, cfg, np.random.default_rng(0))
    ref = pgd_attack(plain_net, ds.images, ds.labels, cfg)
    assert adv.examples.tobytes() == ref.tobytes()
    assert adv.subnet_masks == [all_ones_mask(plain_net)]


def test_exactly_k_attack_calls(monkeypatch):
    calls = []
    real = attack_mod.pgd_attack

    def counting(view, x, *a, **kw):
        calls.append(len(x))
        return real(view, x, *a, **kw)

    monkeypatch.setattr(attack_mod, "pgd_attack", counting)
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=0)
    ds = synth_blobs(per_class=6, seed=0)
    adv = generate_adv_dataset(net, ds, 5, 0.05, 0.1, AttackConfig(steps=1),
                               np.random.default_rng(0))
    assert len(calls) == 5
    assert sum(calls) == len(ds) == len(adv)
    # disjoint shards covering D_s
    assert sorted(j for _, j in adv.provenance) == list(range(len(ds)))
    assert adv.labels.tolist() == ds.labels.tolist()


def test_layer_count_clamp():
    # 4 conv layers and k=5: floor(4/5) = 0 clamps to one mutated layer per sub-net
    specs = [LayerSpec.conv(1, 6, 3, padding=1)] + \
        [LayerSpec.conv(6, 6, 3, padding=1) for _ in range(3)] + \
        [LayerSpec.dense(6 * 4 * 4, 2, spiking=False)]
    net = init_network(specs, (1, 4, 4))
    ds = synth_blobs(num_classes=2, per_class=5, img_size=4, seed=0)
    adv = generate_adv_dataset(net, ds, 5, 1.0, 0.1, AttackConfig(steps=1),
                               np.random.default_rng(3))
    for m in adv.subnet_masks:
        changed = [not s.all() for s in m.segments]
        assert sum(changed) == 1
        assert m.popcount() == 23


def test_generation_is_deterministic(tmp_path):
    net = init_network(DESK_SPECS, DESK_SHAPE, seed=1)
    ds = synth_blobs(per_class=5, seed=0)
    cfg = AttackConfig(steps=2)
    a = generate_adv_dataset(net, ds, 3, 0.3, 0.1, cfg, np.random.default_rng(7))
    b = generate_adv_dataset(net, ds, 3, 0.3, 0.1, cfg, np.random.default_rng(7))
    assert a.examples.tobytes() == b.examples.tobytes()
    assert a.subnet_masks == b.subnet_masks
    save_adv_dataset(tmp_path / "da.bin", a)
    c = load_adv_dataset(tmp_path / "da.bin")
    assert c.examples.tobytes() == a.examples.tobytes()
    assert c.labels.tolist() == a.labels.tolist()
    assert c.provenance == a.provenance and c.attack == a.attack
    assert c.subnet_masks == a.subnet_masks
    assert isinstance(c, AdvDataset)
