"""TRADES versus plain cross-entropy training at equal budget.

Trains both variants of the desk network on the synthetic blobs for several
seeds and prints clean and robust accuracy under the evaluation attack.

    python3 scripts/robustness_compare.py --seeds 0 1 2 --epochs 3
"""
import argparse

from ccsrp.attack import AttackConfig
from ccsrp.config import desk_profile
from ccsrp.training import TrainConfig, evaluate, pretrain


def compare(seeds, epochs, beta):
    cfg = desk_profile()
    train, test = cfg.data.load()
    attack = AttackConfig.eval()
    print(f"{'seed':>4}  {'variant':<7}  {'acc':>6}  {'accr':>6}")
    for seed in seeds:
        for name, b in (("ce", 0.0), ("trades", beta)):
            tc = TrainConfig(epochs=epochs, batch_size=cfg.train.batch_size, trades_beta=b)
            net = pretrain(cfg.layer_specs(), cfg.input_shape, train, tc, seed, cfg.lif)
            acc, accr = evaluate(net, test, attack)
            print(f"{seed:>4}  {name:<7}  {acc:6.3f}  {accr:6.3f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--beta", type=float, default=6.0)
    a = p.parse_args()
    compare(a.seeds, a.epochs, a.beta)
