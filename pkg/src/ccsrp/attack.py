"""L-infinity PGD and the shared adversarial-set generator."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConfigInvalid, EmptyDataset
from .io import atomic_write_bytes, pack_blocks, unpack_blocks
from .pruning import MaskedView, all_ones_mask
from .snn import accuracy, backward, cross_entropy, forward


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    loss: str = "ce"

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ConfigInvalid(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.alpha <= 0 or (self.epsilon > 0 and self.alpha > self.epsilon):
            raise ConfigInvalid(f"need 0 < alpha <= epsilon, got alpha={self.alpha}")
        if self.steps < 1:
            raise ConfigInvalid("steps must be >= 1")
        if self.loss not in ("ce", "kl"):
            raise ConfigInvalid(f"unknown attack loss {self.loss!r}")

    @classmethod
    def train(cls) -> "AttackConfig":
        return cls(8 / 255, 2 / 255, 10, random_start=True)

    @classmethod
    def eval(cls) -> "AttackConfig":
        return cls(8 / 255, 2 / 255, 40, random_start=False)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_grad(logits, y, loss, target_probs):
    if loss == "ce":
        return cross_entropy(logits, y, reduction="sum")[1]
    # d/dz KL(p || softmax(z)) = softmax(z) - p
    return (_softmax(logits) - target_probs).astype(logits.dtype)


def pgd_attack(view, x, y, cfg: AttackConfig, rng: Optional[np.random.Generator] = None,
               target_probs=None, batch_size: int = 256) -> np.ndarray:
    """Untargeted PGD: ``x <- proj(x + alpha * sign(grad_x loss))`` for ``cfg.steps`` steps.

    The projection is onto the intersection of the epsilon L-inf ball around
    the clean input and the [0, 1] pixel box. ``sign(0) == 0``. With
    ``cfg.loss == "kl"`` the ascent objective is KL(target_probs || p(x_adv)),
    and ``target_probs`` defaults to the clean predictions.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    if len(x) == 0:
        return x.copy()
    if x.min() < 0 or x.max() > 1:
        raise ValueError("clean inputs must lie in [0, 1]")
    if cfg.random_start and rng is None:
        raise ConfigInvalid("random_start needs an rng")
    parts = []
    for i in range(0, len(x), batch_size):
        tp = None if target_probs is None else target_probs[i:i + batch_size]
        parts.append(_pgd_batch(view, x[i:i + batch_size], y[i:i + batch_size], cfg, rng, tp))
    return np.concatenate(parts)


def _pgd_batch(view, x, y, cfg: AttackConfig, rng, target_probs):
    eps = np.float32(cfg.epsilon)
    alpha = np.float32(cfg.alpha)
    lo = np.maximum(x - eps, 0)
    hi = np.minimum(x + eps, 1)
    if cfg.loss == "kl" and target_probs is None:
        target_probs = _softmax(forward(view, x)[0])
    if cfg.random_start:
        x_adv = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape).astype(np.float32)
        x_adv = np.clip(x_adv, lo, hi)
    else:
        x_adv = x.copy()
    for _ in range(cfg.steps):
        logits, trace = forward(view, x_adv, record=True, mode="spiking")
        g = backward(view, trace, _loss_grad(logits, y, cfg.loss, target_probs)).input
        x_adv = np.clip(x_adv + alpha * np.sign(g), lo, hi).astype(np.float32)
    return x_adv


@dataclass
class AdvDataset:
    examples: np.ndarray
    labels: np.ndarray
    provenance: list = field(default_factory=list)  # (subnet_id, source_index)
    attack: Optional[AttackConfig] = None
    subnet_masks: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)


def robust_accuracy(view, adv: AdvDataset) -> float:
    return accuracy(view, adv.examples, adv.labels)


def generate_adv_dataset(base, ds: Dataset, k: int, p1: float, r: float, cfg: AttackConfig,
                         rng: np.random.Generator) -> AdvDataset:
    """Attack ``k`` mutated sub-networks of ``base``, one disjoint shard of ``ds`` each.

    Every sub-net mutates ``max(1, n // k)`` distinct, uniformly chosen conv
    layers of an all-ones mask with the bounded bitwise mutation (rate ``p1``,
    bound ``r``). Shard ``i`` uses its own child stream of ``rng`` so shards
    could run in any order.
    """
    from .evolution import bounded_bitwise_mutation

    if k < 1:
        raise ConfigInvalid("k must be >= 1")
    if len(ds) == 0:
        raise EmptyDataset("cannot attack an empty dataset")
    net = base.network
    n = len(net.conv_indices())
    per_subnet = min(n, max(1, n // k))
    shards = np.array_split(np.arange(len(ds)), k)
    streams = rng.spawn(k)
    xs, prov, masks = [], [], []
    for i, (shard, srng) in enumerate(zip(shards, streams)):
        mask = all_ones_mask(net)
        if n:
            for layer in sorted(srng.choice(n, size=per_subnet, replace=False)):
                mask = mask.replace(int(layer), bounded_bitwise_mutation(mask.segments[layer], p1, r, srng))
        masks.append(mask)
        xs.append(pgd_attack(MaskedView(net, mask), ds.images[shard], ds.labels[shard], cfg, srng))
        prov.extend((i, int(j)) for j in shard)
    return AdvDataset(np.concatenate(xs), ds.labels.copy(), prov, cfg, masks)


def save_adv_dataset(path, adv: AdvDataset):
    manifest = {
        "kind": "adv_dataset",
        "labels": [int(v) for v in adv.labels],
        "provenance": [list(p) for p in adv.provenance],
        "attack": asdict(adv.attack) if adv.attack else None,
        "subnet_masks": [m.to_text() for m in adv.subnet_masks],
    }
    atomic_write_bytes(path, pack_blocks(manifest, [("examples", adv.examples)]))


def load_adv_dataset(path) -> AdvDataset:
    from .pruning import FilterMask

    manifest, arrays = unpack_blocks(Path(path).read_bytes())
    if manifest.get("kind") != "adv_dataset":
        raise ValueError(f"{path} is not an adversarial dataset")
    attack = AttackConfig(**manifest["attack"]) if manifest["attack"] else None
    return AdvDataset(arrays["examples"], np.array(manifest["labels"], dtype=np.int64),
                      [tuple(p) for p in manifest["provenance"]], attack,
                      [FilterMask.from_text(t) for t in manifest["subnet_masks"]])
