"""Independent oracles shared by the unit and acceptance tests."""
import numpy as np

from ccsrp.snn import LayerSpec, cross_entropy, forward, init_network

DESK_SPECS = [
    LayerSpec.conv(1, 8, 3, padding=1),
    LayerSpec.conv(8, 16, 3, stride=2, padding=1),
    LayerSpec.dense(16 * 6 * 6, 4, spiking=False),
]
DESK_SHAPE = (1, 12, 12)


def random_small_net(seed, dtype=np.float64):
    """Random conv-conv-dense net with < 10^3 parameters and random biases."""
    rng = np.random.default_rng(seed)
    c1, c2 = rng.integers(2, 5, size=2)
    specs = [
        LayerSpec.conv(1, int(c1), 3, padding=1),
        LayerSpec.conv(int(c1), int(c2), 3, stride=2),
        LayerSpec.dense(int(c2) * 2 * 2, 3, spiking=False),
    ]
    net = init_network(specs, (1, 5, 5), seed=seed).astype(dtype)
    for layer in net.layers:
        layer.weight *= 1.5
        layer.bias[:] = rng.uniform(-0.2, 0.6, size=layer.bias.shape)
    x = rng.random((2, 1, 5, 5)).astype(dtype)
    y = rng.integers(0, 3, size=2)
    return net, x, y


def _regions(net, x):
    """Which piece of the soft spike ramp every membrane value sits on."""
    _, tr = forward(net, x, record=True, mode="soft")
    cfg = net.lif
    out = []
    for lt in tr.layers:
        if lt.v_pre is None:
            continue
        z = (lt.v_pre - cfg.threshold) / cfg.surrogate_width + 0.5
        out.append(np.where(z <= 0, 0, np.where(z >= 1, 2, 1)))
    return out


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def finite_difference_check(net, x, y, analytic_params, analytic_input, h=1e-3, floor=1e-2):
    """Compare analytic gradients of sum-CE (soft mode) with central differences.

    Entries whose +-h perturbation moves any membrane value across a kink of
    the ramp are skipped: there the function is not differentiable on the
    stencil and the difference quotient is not an oracle. Returns
    ``(max_rel_err, n_checked, n_skipped)`` with relative error
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps the O(h^2) truncation
    error of the stencil from dominating near-zero entries.
    """
    def loss():
        logits, _ = forward(net, x, mode="soft")
        return cross_entropy(logits, y, reduction="sum")[0]

    base_regions = _regions(net, x)
    worst, checked, skipped = 0.0, 0, 0
    targets = list(zip(net.params(), analytic_params)) + [(x, analytic_input)]
    for arr, grad in targets:
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp, rp = loss(), _regions(net, x)
            arr[idx] = orig - h
            fm, rm = loss(), _regions(net, x)
            arr[idx] = orig
            if not (_same(rp, base_regions) and _same(rm, base_regions)):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            a = grad[idx]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, rel)
            checked += 1
    return worst, checked, skipped


def brute_force_rank(pool):
    """Selection sort with an explicit pairwise comparator."""
    def better(a, b):
        ia, fa = a
        ib, fb = b
        sa = round((fa.acc + fa.accr) / 2, 12)
        sb = round((fb.acc + fb.accr) / 2, 12)
        if sa != sb:
            return sa > sb
        if fa.flops != fb.flops:
            return fa.flops < fb.flops
        return ia < ib

    items = [(i, ind.fitness) for i, ind in enumerate(pool)]
    out = []
    while items:
        best = items[0]
        for it in items[1:]:
            if better(it, best):
                best = it
        out.append(pool[best[0]])
        items.remove(best)
    return out
