"""Compare the per-layer EA against exhaustive search on the first conv layer.

Pretrains the desk network, enumerates all nonempty masks of its 8-filter
layer, then reports where EA winners from several seeds land in that
distribution.

    python3 scripts/ea_oracle.py --runs 20
"""
import argparse
import itertools

import numpy as np

from ccsrp.attack import generate_adv_dataset
from ccsrp.config import desk_profile
from ccsrp.data import sample_subset
from ccsrp.evolution import Individual, ea_optimize_layer, evaluate_individual
from ccsrp.pruning import all_ones_mask
from ccsrp.training import pretrain


def main(runs: int, seed: int):
    cfg = desk_profile()
    train, _ = cfg.data.load()
    net = pretrain(cfg.layer_specs(), cfg.input_shape, train, cfg.train, seed, cfg.lif)
    D_s = sample_subset(train, cfg.ccsrp.sample_fraction, seed)
    D_a = generate_adv_dataset(net, D_s, cfg.ccsrp.k, cfg.ccsrp.ea.p1, cfg.ccsrp.ea.r,
                               cfg.ccsrp.eval_attack, np.random.default_rng(seed))
    mask = all_ones_mask(net)
    n = mask.lengths[0]
    scores = {}
    for bits in itertools.product([False, True], repeat=n):
        if any(bits):
            fit = evaluate_individual(Individual(bits), 0, net, mask, D_s, D_a)
            scores[bytes(np.array(bits))] = fit
    all_scores = np.array([f.score for f in scores.values()])
    print(f"{len(all_scores)} masks, score range {all_scores.min():.3f}-{all_scores.max():.3f}, "
          f"90th percentile {np.percentile(all_scores, 90):.3f}")

    def lookup(ind):
        ind.fitness = scores[ind.key()]

    for r in range(runs):
        best = ea_optimize_layer(0, net, mask, D_s, D_a, cfg.ccsrp.ea, np.random.default_rng(r),
                                 evaluate=lookup)
        higher = int((all_scores > best.score).sum())
        bits = "".join("1" if b else "0" for b in best.bits)
        print(f"run {r:>2}: {bits} score {best.score:.3f} flops {best.fitness.flops} "
              f"({higher} masks score higher)")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    main(a.runs, a.seed)
