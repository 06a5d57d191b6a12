"""Binary artifact format and atomic file helpers.

Layout of a blob file::

    u64 little-endian   manifest length in bytes
    manifest            UTF-8 JSON; "blocks" lists name/shape/offset/nbytes
    data                raw little-endian float32 blocks, offsets relative
                        to the start of the data section

Checkpoints and adversarial datasets share this layout.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .snn import Layer, LayerSpec, LifConfig, Network

FORMAT_VERSION = 1


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def pack_blocks(manifest: dict, blocks: Sequence[tuple[str, np.ndarray]]) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in blocks:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(manifest, blocks=entries, format_version=FORMAT_VERSION)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return struct.pack("<Q", len(head)) + head + b"".join(chunks)


def unpack_blocks(raw: bytes) -> tuple[dict, dict]:
    if len(raw) < 8:
        raise ValueError("blob file truncated")
    (n,) = struct.unpack("<Q", raw[:8])
    manifest = json.loads(raw[8:8 + n].decode("utf-8"))
    data = raw[8 + n:]
    arrays = {}
    for b in manifest["blocks"]:
        chunk = data[b["offset"]:b["offset"] + b["nbytes"]]
        if len(chunk) != b["nbytes"]:
            raise ValueError(f"block {b['name']} truncated")
        arrays[b["name"]] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(b["shape"])
    return manifest, arrays


def network_bytes(net: Network) -> bytes:
    manifest = {
        "kind": "checkpoint",
        "input_shape": list(net.input_shape),
        "lif": {
            "decay": net.lif.decay,
            "threshold": net.lif.threshold,
            "timesteps": net.lif.timesteps,
            "surrogate_width": net.lif.surrogate_width,
            "reset": net.lif.reset,
        },
        "layers": [l.spec.to_dict() for l in net.layers],
        "seed_tag": net.seed_tag,
    }
    blocks = []
    for i, l in enumerate(net.layers):
        blocks += [(f"w{i}", l.weight), (f"b{i}", l.bias)]
    return pack_blocks(manifest, blocks)


def save_network(path, net: Network):
    atomic_write_bytes(path, network_bytes(net))


def load_network(path) -> Network:
    manifest, arrays = unpack_blocks(Path(path).read_bytes())
    if manifest.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    layers = [Layer(LayerSpec.from_dict(d), arrays[f"w{i}"].copy(), arrays[f"b{i}"].copy())
              for i, d in enumerate(manifest["layers"])]
    return Network(layers, tuple(manifest["input_shape"]), LifConfig(**manifest["lif"]),
                   seed_tag=manifest.get("seed_tag", 0))
