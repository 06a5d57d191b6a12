"""TRADES adversarial training with momentum SGD and cosine annealing."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .attack import AttackConfig, pgd_attack
from .data import Dataset, shuffle_batches
from .errors import ConfigInvalid, EmptyDataset
from .snn import LayerSpec, LifConfig, Network, accuracy, backward, forward, init_network

LOG_FIELDS = ("step", "epoch", "lr", "loss", "clean_acc", "accr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    trades_beta: float = 6.0
    attack: AttackConfig = field(default_factory=AttackConfig.train)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigInvalid("epochs must be >= 0 and batch_size >= 1")
        if self.lr0 <= 0 or self.momentum < 0 or self.weight_decay < 0 or self.trades_beta < 0:
            raise ConfigInvalid("lr0 must be positive; momentum, weight_decay, trades_beta >= 0")
        if self.schedule != "cosine":
            raise ConfigInvalid(f"unsupported schedule {self.schedule!r}")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 / 2 * (1 + math.cos(math.pi * step / total_steps))


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             velocity: Sequence[np.ndarray], lr: float, momentum: float, weight_decay: float):
    """In-place momentum SGD with L2 weight decay.

    ``g' = g + wd * p``; ``v = momentum * v + g'``; ``p = p - lr * v``.
    """
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError("parameter, gradient and velocity shapes differ")
        gp = g + p.dtype.type(weight_decay) * p
        v *= v.dtype.type(momentum)
        v += gp
        p -= p.dtype.type(lr) * v
    return params, velocity


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def trades_loss(logits_clean, logits_adv, y, beta: float):
    """``CE(clean, y) + beta * KL(softmax(clean) || softmax(adv))``, batch mean.

    Returns ``(loss, grad_clean, grad_adv)``.
    """
    zc = np.asarray(logits_clean, dtype=np.float64)
    za = np.asarray(logits_adv, dtype=np.float64)
    if zc.shape != za.shape:
        raise ValueError("clean and adversarial logits differ in shape")
    n = zc.shape[0]
    y = np.asarray(y, dtype=np.int64)
    lp, lq = _log_softmax(zc), _log_softmax(za)
    p, q = np.exp(lp), np.exp(lq)
    ce = -lp[np.arange(n), y].mean()
    a = lp - lq
    kl = (p * a).sum(axis=1).mean()
    g_clean = p.copy()
    g_clean[np.arange(n), y] -= 1
    g_clean += beta * p * (a - (p * a).sum(axis=1, keepdims=True))
    g_adv = beta * (q - p)
    dt = np.asarray(logits_clean).dtype
    return float(ce + beta * kl), (g_clean / n).astype(dt), (g_adv / n).astype(dt)


def adv_finetune(net: Network, data: Dataset, cfg: TrainConfig, rng,
                 eval_data: Optional[Dataset] = None,
                 log: Optional[Callable[[dict], None]] = None) -> Network:
    """Train a copy of ``net`` on ``data`` and return it.

    Each batch crafts PGD examples against the current weights (skipped when
    ``trades_beta == 0``, which is plain cross-entropy training), then takes
    one SGD step on the TRADES loss. The learning rate follows a cosine
    schedule over ``epochs * batches`` steps.
    """
    if len(data) == 0:
        raise EmptyDataset("training set is empty")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    net = net.copy()
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    n_batches = math.ceil(len(data) / cfg.batch_size)
    total = cfg.epochs * n_batches
    step = 0
    for epoch in range(cfg.epochs):
        for idx in shuffle_batches(len(data), cfg.batch_size, rng):
            xb, yb = data.images[idx], data.labels[idx]
            lr = cosine_lr(step, total, cfg.lr0)
            logits, trace = forward(net, xb, record=True)
            if cfg.trades_beta > 0:
                x_adv = pgd_attack(net, xb, yb, cfg.attack, rng)
                logits_adv, trace_adv = forward(net, x_adv, record=True)
                loss, gc, ga = trades_loss(logits, logits_adv, yb, cfg.trades_beta)
                grads = [a + b for a, b in zip(backward(net, trace, gc, need_input=False).flat(),
                                               backward(net, trace_adv, ga, need_input=False).flat())]
            else:
                loss, gc, _ = trades_loss(logits, logits, yb, 0.0)
                grads = backward(net, trace, gc, need_input=False).flat()
            sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            net.bump_version()
            step += 1
            if log is not None:
                log({"step": step, "epoch": epoch, "lr": lr, "loss": loss, "clean_acc": "", "accr": ""})
        if log is not None and eval_data is not None:
            acc, accr = evaluate(net, eval_data, cfg.attack, np.random.default_rng(epoch))
            log({"step": step, "epoch": epoch, "lr": cosine_lr(step, total, cfg.lr0),
                 "loss": "", "clean_acc": acc, "accr": accr})
    return net


def evaluate(view, data: Dataset, attack: AttackConfig, rng=None) -> tuple[float, float]:
    """Clean accuracy and accuracy under ``attack`` crafted against ``view`` itself."""
    acc = accuracy(view, data.images, data.labels)
    x_adv = pgd_attack(view, data.images, data.labels, attack, rng)
    accr = accuracy(view, x_adv, data.labels)
    return acc, accr


def pretrain(specs: Sequence[LayerSpec], input_shape, data: Dataset, cfg: TrainConfig, seed: int,
             lif: Optional[LifConfig] = None, eval_data: Optional[Dataset] = None,
             log: Optional[Callable[[dict], None]] = None) -> Network:
    net = init_network(specs, input_shape, lif, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    return adv_finetune(net, data, cfg, rng, eval_data=eval_data, log=log)


class CsvLog:
    """Collects training log rows; ``to_csv`` renders them with a fixed header."""

    def __init__(self):
        self.rows: list[dict] = []

    def __call__(self, row: dict):
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()
