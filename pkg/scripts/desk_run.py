"""Pretrain, prune and report on the desk profile in one go.

    python3 scripts/desk_run.py --out runs/desk --seed 0

Equivalent to running ``ccsrp pretrain``, ``ccsrp prune`` and ``ccsrp report``
with the same flags; prints the final report table.
"""
import argparse
import sys
import time
from pathlib import Path

from ccsrp.cli import main


def run(out: Path, seed: int, profile: str) -> int:
    common = ["--profile", profile, "--seed", str(seed), "--out", str(out)]
    t0 = time.perf_counter()
    steps = [
        ["pretrain", *common],
        ["prune", *common, "--checkpoint", str(out / "pretrained.ckpt")],
        ["report", "--archive", str(out / "archive")],
    ]
    for argv in steps:
        code = main(argv)
        if code:
            return code
    print(f"done in {time.perf_counter() - t0:.1f}s; archive at {out / 'archive'}")
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", default="desk", choices=["desk", "paper"])
    a = p.parse_args()
    sys.exit(run(Path(a.out), a.seed, a.profile))
