"""Cooperative-coevolutionary robust filter pruning.

Each outer iteration splits the filter mask of the current base network into
one segment per conv layer and evolves every segment with its own small
elitist EA. Fitness is (clean accuracy, robust accuracy, FLOPs) of the base
network with only that layer's segment replaced. The per-layer winners are
combined, the network is physically pruned, adversarially fine-tuned and
becomes the next base.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .attack import AdvDataset, AttackConfig, generate_adv_dataset, robust_accuracy
from .data import Dataset, sample_subset
from .errors import CcsrpError, ConfigInvalid, SegmentLengthMismatch, UnevaluatedIndividual
from .pruning import FilterMask, MaskedView, all_ones_mask, count_flops, materialize
from .snn import Network, accuracy
from .training import TrainConfig, adv_finetune, evaluate

log = logging.getLogger(__name__)

# rng stream purposes inside one outer iteration
_SAMPLE, _ADVGEN, _FINETUNE, _LAYER, _EVAL = range(5)


@dataclass(frozen=True)
class EaConfig:
    d: int = 5
    p1: float = 0.05
    p2: float = 0.1
    r: float = 0.1
    G: int = 10
    allow_restore: bool = True

    def __post_init__(self):
        if self.d < 1 or self.G < 1:
            raise ConfigInvalid("d and G must be >= 1")
        if not (0 <= self.p1 <= 1 and 0 <= self.p2 <= 1):
            raise ConfigInvalid("mutation rates must lie in [0, 1]")
        if not 0 < self.r <= 1:
            raise ConfigInvalid("ratio bound r must lie in (0, 1]")


@dataclass(frozen=True)
class CcsrpConfig:
    T: int = 16
    k: int = 5
    sample_fraction: float = 0.10
    ea: EaConfig = field(default_factory=EaConfig)
    finetune: TrainConfig = field(default_factory=TrainConfig)
    eval_attack: AttackConfig = field(default_factory=AttackConfig.eval)
    resample_subset: bool = True
    stratified: bool = True
    regenerate_adv_per_layer: bool = False

    def __post_init__(self):
        if self.T < 1 or self.k < 1:
            raise ConfigInvalid("T and k must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigInvalid("sample_fraction must lie in (0, 1]")


class Fitness(NamedTuple):
    acc: float
    accr: float
    flops: int

    @property
    def score(self) -> float:
        # rounded so that e.g. (0.8 + 0.6) / 2 ties with (0.7 + 0.7) / 2
        return round((self.acc + self.accr) / 2, 12)


class Individual:
    """One layer-local mask segment and, once evaluated, its fitness."""

    __slots__ = ("bits", "_fitness")

    def __init__(self, bits, fitness: Optional[Fitness] = None):
        b = np.array(bits, dtype=bool).reshape(-1)
        if not b.any():
            raise ValueError("an individual must retain at least one filter")
        b.setflags(write=False)
        self.bits = b
        self._fitness = fitness

    @property
    def fitness(self) -> Optional[Fitness]:
        return self._fitness

    @fitness.setter
    def fitness(self, value: Fitness):
        if self._fitness is not None and self._fitness != value:
            raise ValueError("fitness is immutable once assigned")
        self._fitness = Fitness(*value)

    @property
    def score(self) -> float:
        if self._fitness is None:
            raise UnevaluatedIndividual("individual has not been evaluated")
        return self._fitness.score

    def key(self) -> bytes:
        return self.bits.tobytes()

    def __repr__(self):
        bits = "".join("1" if b else "0" for b in self.bits)
        return f"Individual({bits}, {self._fitness})"


def _cap(r: float, n: int) -> int:
    return max(1, math.ceil(round(r * n, 9)))


def bounded_bitwise_mutation(bits, p: float, r: float, rng: np.random.Generator,
                             allow_restore: bool = True) -> np.ndarray:
    """Bitwise mutation that prunes at most ``ceil(r * len)`` filters per call.

    Every bit is scheduled to flip with probability ``p``. If more 1->0 flips
    are scheduled than the bound allows, a uniformly random subset of the
    bound's size is kept. 0->1 flips are applied unconditionally (or dropped
    when ``allow_restore`` is off). An all-zero result gets one random bit back.
    """
    bits = np.asarray(bits, dtype=bool)
    n = bits.size
    flips = rng.random(n) < p
    prune = np.flatnonzero(flips & bits)
    cap = _cap(r, n)
    if prune.size > cap:
        prune = rng.choice(prune, size=cap, replace=False)
    out = bits.copy()
    out[prune] = False
    if allow_restore:
        out[flips & ~bits] = True
    if not out.any():
        out[rng.integers(n)] = True
    return out


def init_subpopulation(m0: Individual, cfg: EaConfig, rng: np.random.Generator) -> list[Individual]:
    pop = [m0]
    for _ in range(cfg.d - 1):
        pop.append(Individual(bounded_bitwise_mutation(m0.bits, cfg.p1, cfg.r, rng, cfg.allow_restore)))
    return pop


def evaluate_individual(ind: Individual, layer_pos: int, base: Network, base_mask: FilterMask,
                        D_s: Dataset, D_a: AdvDataset) -> Fitness:
    """Splice ``ind`` into ``base_mask`` at conv layer ``layer_pos`` and score the result."""
    if ind.bits.size != base_mask.segments[layer_pos].size:
        raise SegmentLengthMismatch(
            f"individual has {ind.bits.size} bits, layer has {base_mask.segments[layer_pos].size}")
    view = MaskedView(base, base_mask.replace(layer_pos, ind.bits))
    fit = Fitness(accuracy(view, D_s.images, D_s.labels), robust_accuracy(view, D_a),
                  count_flops(view).total_flops)
    ind.fitness = fit
    return fit


def rank(pool: Sequence[Individual]) -> list[Individual]:
    """Sort by mean of (acc, accr) descending, then FLOPs ascending, then pool order."""
    for ind in pool:
        if ind.fitness is None:
            raise UnevaluatedIndividual("rank needs evaluated individuals")
    order = sorted(range(len(pool)), key=lambda i: (-pool[i].score, pool[i].fitness.flops, i))
    return [pool[i] for i in order]


def ea_optimize_layer(layer_pos: int, base: Network, base_mask: FilterMask, D_s: Dataset,
                      D_a: AdvDataset, cfg: EaConfig, rng: np.random.Generator,
                      evaluate: Optional[Callable[[Individual], Fitness]] = None,
                      history: Optional[list] = None) -> Individual:
    """Evolve one layer's segment for ``cfg.G`` generations; return the rank-one survivor.

    ``evaluate`` overrides fitness evaluation (it must set ``ind.fitness``).
    Identical bit strings are scored once and the result reused. If given,
    ``history`` receives the best score of P after initialisation and after
    every generation.
    """
    cache: dict[bytes, Fitness] = {}

    def score(ind):
        if evaluate is not None:
            evaluate(ind)
        elif ind.key() in cache:
            ind.fitness = cache[ind.key()]
        else:
            cache[ind.key()] = evaluate_individual(ind, layer_pos, base, base_mask, D_s, D_a)

    m0 = Individual(base_mask.segments[layer_pos])
    P = init_subpopulation(m0, cfg, rng)
    for ind in P:
        score(ind)
    P = rank(P)
    if history is not None:
        history.append(P[0].score)
    for _ in range(cfg.G):
        parents = rng.integers(0, len(P), size=cfg.d)
        offspring = [Individual(bounded_bitwise_mutation(P[i].bits, cfg.p2, cfg.r, rng, cfg.allow_restore))
                     for i in parents]
        for ind in offspring:
            score(ind)
        P = rank(P + offspring)[:cfg.d]
        if history is not None:
            history.append(P[0].score)
    return P[0]


# ---------------------------------------------------------------------------
# outer loop

@dataclass
class ArchiveEntry:
    iteration: int
    network: Network
    mask: FilterMask             # relative to the iteration's base network
    cumulative_mask: FilterMask  # relative to the pretrained network
    summary: dict


@dataclass
class Archive:
    entries: list[ArchiveEntry] = field(default_factory=list)
    base_summary: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


class RunAborted(CcsrpError, RuntimeError):
    """Raised when an iteration fails; ``archive`` holds the completed entries."""

    def __init__(self, message, archive: Archive):
        super().__init__(message)
        self.archive = archive


def iteration_rng(seed: int, iteration: int, *purpose) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(iteration,) + tuple(purpose)))


def base_summary(net: Network, eval_data: Dataset, eval_attack: AttackConfig, seed: int) -> dict:
    acc, accr = evaluate(net, eval_data, eval_attack, iteration_rng(seed, 0, _EVAL, 0))
    flops = count_flops(net).total_flops
    return {"acc": acc, "accr": accr, "flops": flops, "filters": _filters(net)}


def _filters(net: Network) -> list[int]:
    return [net.layers[i].spec.out_channels for i in net.conv_indices()]


def ccsrp_iteration(t: int, N_b: Network, D_t: Dataset, cfg: CcsrpConfig, seed: int,
                    threads: int = 1):
    """One outer iteration. Returns ``(pruned_and_finetuned, iteration_mask, search_info)``."""
    fixed = 0 if not cfg.resample_subset else t
    D_s = sample_subset(D_t, cfg.sample_fraction, iteration_rng(seed, fixed, _SAMPLE),
                        stratified=cfg.stratified)
    D_a = generate_adv_dataset(N_b, D_s, cfg.k, cfg.ea.p1, cfg.ea.r, cfg.eval_attack,
                               iteration_rng(seed, t, _ADVGEN))
    M = all_ones_mask(N_b)
    n = len(M)

    def run_layer(pos):
        rng = iteration_rng(seed, t, _LAYER, pos)
        adv = D_a
        if cfg.regenerate_adv_per_layer:
            adv = generate_adv_dataset(N_b, D_s, cfg.k, cfg.ea.p1, cfg.ea.r, cfg.eval_attack,
                                       iteration_rng(seed, t, _ADVGEN, pos))
        return ea_optimize_layer(pos, N_b, M, D_s, adv, cfg.ea, rng)

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            winners = list(ex.map(run_layer, range(n)))
    else:
        winners = [run_layer(pos) for pos in range(n)]
    M_new = FilterMask([w.bits for w in winners], M.structure)
    view = MaskedView(N_b, M_new)
    search = {
        "search_acc": accuracy(view, D_s.images, D_s.labels),
        "search_accr": robust_accuracy(view, D_a),
        "search_flops": count_flops(view).total_flops,
        "layer_winners": [list(w.fitness) for w in winners],
    }
    pruned = materialize(N_b, M_new)
    tuned = adv_finetune(pruned, D_t, cfg.finetune, iteration_rng(seed, t, _FINETUNE))
    return tuned, M_new, search


def ccsrp_run(pretrained: Network, D_t: Dataset, cfg: CcsrpConfig, seed: int,
              eval_data: Optional[Dataset] = None, archive: Optional[Archive] = None,
              on_entry: Optional[Callable[[ArchiveEntry, Archive], None]] = None,
              threads: int = 1) -> Archive:
    """Run (or continue) the outer loop for ``cfg.T`` iterations.

    Pass a partially filled ``archive`` to resume; every iteration draws its
    randomness from ``(seed, iteration)`` so a resumed run ends identical to an
    uninterrupted one. ``on_entry`` is called after each completed iteration.
    """
    eval_data = eval_data if eval_data is not None else D_t
    if archive is None:
        archive = Archive()
    if not archive.base_summary:
        archive.base_summary = base_summary(pretrained, eval_data, cfg.eval_attack, seed)
    base_flops = archive.base_summary["flops"]
    if archive.entries:
        N_b = archive.entries[-1].network
        orig_idx = [np.flatnonzero(s) for s in archive.entries[-1].cumulative_mask.segments]
    else:
        N_b = pretrained
        orig_idx = [np.arange(n) for n in _filters(pretrained)]
    orig_len = _filters(pretrained)
    for t in range(len(archive), cfg.T):
        try:
            tuned, M_new, search = ccsrp_iteration(t, N_b, D_t, cfg, seed, threads)
        except Exception as exc:
            raise RunAborted(f"iteration {t} failed: {exc!r}", archive) from exc
        orig_idx = [idx[seg] for idx, seg in zip(orig_idx, M_new.segments)]
        cum = []
        for idx, n in zip(orig_idx, orig_len):
            bits = np.zeros(n, dtype=bool)
            bits[idx] = True
            cum.append(bits)
        acc, accr = evaluate(tuned, eval_data, cfg.eval_attack, iteration_rng(seed, t, _EVAL))
        flops = count_flops(tuned).total_flops
        summary = {"iteration": t, "acc": acc, "accr": accr, "flops": flops,
                   "flops_ratio": flops / base_flops, "filters": _filters(tuned), **search}
        entry = ArchiveEntry(t, tuned, M_new, FilterMask(cum, pretrained.structure()), summary)
        archive.entries.append(entry)
        log.info("iteration %d: acc=%.4f accr=%.4f flops=%d (%.1f%%)", t, acc, accr, flops,
                 100 * flops / base_flops)
        if on_entry is not None:
            on_entry(entry, archive)
        N_b = tuned
    return archive
