"""On-disk archive layout.

::

    <dir>/run.json                 config, base metrics, status
    <dir>/iter_000/model.ckpt      fine-tuned pruned network
    <dir>/iter_000/mask.txt        mask applied to that iteration's base
    <dir>/iter_000/cumulative_mask.txt   retained filters of the pretrained net
    <dir>/iter_000/fitness.json    per-iteration summary
    <dir>/summary.csv              iteration, acc, accr, flops, flops_ratio, flops_pct
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

from .errors import MissingEntry
from .evolution import Archive, ArchiveEntry
from .io import atomic_write_text, load_network, read_json, save_network, write_json
from .pruning import FilterMask

SUMMARY_FIELDS = ("iteration", "acc", "accr", "flops", "flops_ratio", "flops_pct")
REPORT_FIELDS = ("iteration", "acc", "accr", "flops", "flops_pct",
                 "base_acc", "base_accr", "base_flops", "acc_drop", "accr_drop", "filters")


def entry_dir(root, iteration: int) -> Path:
    return Path(root) / f"iter_{iteration:03d}"


def write_entry(root, entry: ArchiveEntry):
    d = entry_dir(root, entry.iteration)
    save_network(d / "model.ckpt", entry.network)
    atomic_write_text(d / "mask.txt", entry.mask.to_text())
    atomic_write_text(d / "cumulative_mask.txt", entry.cumulative_mask.to_text())
    # fitness.json last: its presence marks the entry complete
    write_json(d / "fitness.json", entry.summary)


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def summary_csv(archive: Archive) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for e in archive:
        s = e.summary
        w.writerow([s["iteration"], _fmt(s["acc"]), _fmt(s["accr"]), s["flops"],
                    _fmt(s["flops_ratio"]), _fmt(100.0 * (1.0 - s["flops_ratio"]))])
    return buf.getvalue()


def write_summary(root, archive: Archive):
    atomic_write_text(Path(root) / "summary.csv", summary_csv(archive))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def load_archive(root, structure=None) -> Archive:
    """Load every complete entry (consecutive from 0) under ``root``."""
    root = Path(root)
    archive = Archive()
    run = root / "run.json"
    if run.is_file():
        archive.base_summary = read_json(run).get("base", {})
    t = 0
    while (entry_dir(root, t) / "fitness.json").is_file():
        d = entry_dir(root, t)
        net = load_network(d / "model.ckpt")
        mask = FilterMask.from_text((d / "mask.txt").read_text())
        cum = FilterMask.from_text((d / "cumulative_mask.txt").read_text(), structure)
        archive.entries.append(ArchiveEntry(t, net, mask, cum, read_json(d / "fitness.json")))
        t += 1
    return archive


def report(root, out_csv=None, mask_dir=None) -> list[dict]:
    """Merge per-iteration JSONs into one table with degradation columns.

    ``acc_drop``/``accr_drop`` are base minus entry (positive means worse);
    ``flops_pct`` is the FLOPs reduction in percent.
    """
    root = Path(root)
    if not (root / "run.json").is_file():
        raise MissingEntry(f"{root} is not an archive (run.json missing)")
    archive = load_archive(root)
    if len(archive) == 0:
        raise MissingEntry(f"{root} has no completed iterations")
    expected = read_json(root / "run.json").get("completed")
    if expected is not None and expected > len(archive):
        raise MissingEntry(f"archive lists {expected} iterations, found {len(archive)}")
    base = archive.base_summary
    rows = []
    for e in archive:
        s = e.summary
        rows.append({
            "iteration": s["iteration"],
            "acc": s["acc"],
            "accr": s["accr"],
            "flops": s["flops"],
            "flops_pct": 100.0 * (1.0 - s["flops"] / base["flops"]),
            "base_acc": base["acc"],
            "base_accr": base["accr"],
            "base_flops": base["flops"],
            "acc_drop": base["acc"] - s["acc"],
            "accr_drop": base["accr"] - s["accr"],
            "filters": "/".join(str(n) for n in s["filters"]),
        })
    if out_csv is not None:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
        atomic_write_text(out_csv, buf.getvalue())
    if mask_dir is not None:
        for e in archive:
            atomic_write_text(Path(mask_dir) / f"iteration_{e.iteration:03d}.txt",
                              e.cumulative_mask.to_text())
    return rows
