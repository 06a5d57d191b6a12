"""Command line entry point: ``ccsrp {pretrain,prune,eval,report}``.

Exit codes: 0 success, 1 configuration/input error, 2 runtime failure.
The ``CCSRP_THREADS`` environment variable sets how many per-layer EAs run
concurrently during pruning (results do not depend on it).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import archive as arch
from .attack import AttackConfig
from .config import RunConfig, profile
from .errors import CcsrpError, ConfigInvalid, MissingEntry
from .evolution import RunAborted, ccsrp_run
from .io import atomic_write_text, load_network, read_json, save_network, write_json
from .pruning import FilterMask, apply_mask, count_flops
from .training import CsvLog, evaluate, pretrain

log = logging.getLogger("ccsrp")


def _config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = profile(args.profile)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "out", None):
        cfg = cfg.replace(out_dir=args.out)
    return cfg


def _load_checkpoint(path):
    if not Path(path).is_file():
        raise ConfigInvalid(f"checkpoint not found: {path}")
    return load_network(path)


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    train, test = cfg.data.load()
    if train.input_shape != cfg.input_shape:
        raise ConfigInvalid(f"dataset shape {train.input_shape} != input_shape {cfg.input_shape}")
    out = Path(cfg.out_dir)
    csv_log = CsvLog()
    net = pretrain(cfg.layer_specs(), cfg.input_shape, train, cfg.train, cfg.seed, cfg.lif,
                   eval_data=test, log=csv_log)
    out.mkdir(parents=True, exist_ok=True)
    save_network(out / "pretrained.ckpt", net)
    atomic_write_text(out / "pretrain_log.csv", csv_log.to_csv())
    atomic_write_text(out / "config.json", cfg.to_json())
    print(out / "pretrained.ckpt")
    return 0


def cmd_prune(args) -> int:
    cfg = _config(args)
    train, test = cfg.data.load()
    net = _load_checkpoint(args.checkpoint)
    if net.input_shape != train.input_shape:
        raise ConfigInvalid("checkpoint input shape does not match the dataset")
    root = Path(args.archive or Path(cfg.out_dir) / "archive")
    run_path = root / "run.json"
    archive = None
    if run_path.is_file():
        prev = read_json(run_path)
        if prev.get("config") != cfg.to_dict():
            raise ConfigInvalid(f"{root} holds a run with a different config")
        archive = arch.load_archive(root, net.structure())
        log.info("resuming from %d completed iterations", len(archive))
    threads = int(os.environ.get("CCSRP_THREADS", "1") or 1)

    def status(archive, state, error=None):
        doc = {"config": cfg.to_dict(), "base": archive.base_summary,
               "completed": len(archive), "status": state}
        if error:
            doc["error"] = error
        write_json(run_path, doc)
        arch.write_summary(root, archive)

    def on_entry(entry, archive):
        arch.write_entry(root, entry)
        status(archive, "running")

    root.mkdir(parents=True, exist_ok=True)
    if archive is None:
        from .evolution import Archive, base_summary
        archive = Archive(base_summary=base_summary(net, test, cfg.ccsrp.eval_attack, cfg.seed))
        status(archive, "running")
    try:
        archive = ccsrp_run(net, train, cfg.ccsrp, cfg.seed, eval_data=test, archive=archive,
                            on_entry=on_entry, threads=threads)
    except RunAborted as exc:
        status(exc.archive, "aborted", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 2
    status(archive, "complete")
    print(root / "summary.csv")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    train, test = cfg.data.load()
    data = test if args.split == "test" else train
    net = _load_checkpoint(args.checkpoint)
    if net.input_shape != data.input_shape:
        raise ConfigInvalid(f"checkpoint expects {net.input_shape}, dataset has {data.input_shape}")
    view = net
    if args.mask:
        view = apply_mask(net, FilterMask.from_text(Path(args.mask).read_text()))
    if args.attack == "train":
        attack = cfg.train.attack
    else:
        attack = cfg.ccsrp.eval_attack
    if args.epsilon is not None or args.steps is not None:
        eps = attack.epsilon if args.epsilon is None else args.epsilon
        attack = AttackConfig(eps, attack.alpha if eps == 0 else min(attack.alpha, eps),
                              attack.steps if args.steps is None else args.steps,
                              attack.random_start, attack.loss)
    acc, accr = evaluate(view, data, attack, np.random.default_rng(cfg.seed))
    report = {"acc": acc, "accr": accr, "flops": count_flops(view).total_flops,
              "attack": {"epsilon": attack.epsilon, "alpha": attack.alpha, "steps": attack.steps,
                         "random_start": attack.random_start}, "n": len(data)}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        atomic_write_text(args.report, text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    root = Path(args.archive)
    out = Path(args.out) if args.out else root
    rows = arch.report(root, out / "report.csv", out / "masks")
    for row in rows:
        print(f"iter {row['iteration']:>3}  acc {row['acc']:.4f}  accr {row['accr']:.4f}  "
              f"flops -{row['flops_pct']:.2f}%  filters {row['filters']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccsrp", description="Cooperative-coevolutionary robust "
                                "pruning of spiking CNNs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run config JSON (overrides --profile)")
        sp.add_argument("--profile", default="desk", choices=["paper", "desk"])
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="override the output directory")

    sp = sub.add_parser("pretrain", help="adversarially train the starting network")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("prune", help="run the iterative evolutionary pruning")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--archive", help="archive directory (default <out>/archive)")
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("eval", help="clean and robust accuracy of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mask", help="evaluate the checkpoint under this mask file")
    sp.add_argument("--attack", choices=["eval", "train"], default="eval")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--split", choices=["test", "train"], default="test")
    sp.add_argument("--report", help="also write the JSON report here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="consolidate an archive into report.csv and mask dumps")
    sp.add_argument("--archive", required=True)
    sp.add_argument("--out", help="output directory (default: the archive)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, MissingEntry, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CcsrpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
