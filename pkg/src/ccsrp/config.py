"""Run configuration: one JSON document, strict keys, two presets.

``paper`` carries the published hyperparameters (T=16, d=5, p1=0.05,
p2=0.1, r=0.1, G=10, k=5, 10% subsets, SGD 0.1 / 0.9 / 1e-4, 30 epochs of
batch 128, PGD 8/255-10-2/255 for training and 8/255-40-2/255 for
evaluation). ``desk`` shrinks the schedule so a full run takes minutes.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import Dataset, load_idx, synth_blobs
from .errors import ConfigInvalid
from .evolution import CcsrpConfig, EaConfig
from .snn import LayerSpec, LifConfig, infer_shapes
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    num_classes: int = 4
    per_class: int = 200
    test_per_class: int = 50
    img_size: int = 12
    noise_std: float = 0.05
    background: float = 0.3
    amplitude: float = 0.12
    data_seed: int = 1
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""

    def __post_init__(self):
        if self.source not in ("synth", "idx"):
            raise ConfigInvalid(f"unknown data source {self.source!r}")
        if self.source == "idx" and not (self.train_images and self.train_labels):
            raise ConfigInvalid("idx source needs train_images and train_labels")

    def load(self) -> tuple[Dataset, Dataset]:
        """Return ``(train, test)``. Missing IDX files raise ConfigInvalid."""
        if self.source == "synth":
            kw = dict(num_classes=self.num_classes, img_size=self.img_size, noise_std=self.noise_std,
                      background=self.background, amplitude=self.amplitude)
            train = synth_blobs(per_class=self.per_class, seed=self.data_seed, **kw)
            test = synth_blobs(per_class=self.test_per_class, seed=self.data_seed + 10_000, **kw)
            return train, test
        paths = [self.train_images, self.train_labels]
        if self.test_images:
            paths += [self.test_images, self.test_labels]
        for p in paths:
            if not Path(p).is_file():
                raise ConfigInvalid(f"dataset file not found: {p}")
        train = load_idx(self.train_images, self.train_labels, self.num_classes or None, "train")
        test = train
        if self.test_images:
            test = load_idx(self.test_images, self.test_labels, train.num_classes, "test")
        return train, test


def desk_arch(channels: int = 1, img_size: int = 12, num_classes: int = 4) -> list[dict]:
    after = (img_size + 2 - 3) // 2 + 1
    return [
        LayerSpec.conv(channels, 8, 3, padding=1).to_dict(),
        LayerSpec.conv(8, 16, 3, stride=2, padding=1).to_dict(),
        LayerSpec.dense(16 * after * after, num_classes, spiking=False).to_dict(),
    ]


@dataclass(frozen=True)
class RunConfig:
    profile: str = "paper"
    seed: int = 0
    out_dir: str = "runs/paper"
    data: DataConfig = field(default_factory=DataConfig)
    input_shape: tuple = (1, 12, 12)
    arch: tuple = field(default_factory=lambda: tuple(desk_arch()))
    lif: LifConfig = field(default_factory=LifConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ccsrp: CcsrpConfig = field(default_factory=CcsrpConfig)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "arch", tuple(dict(a) for a in self.arch))
        try:
            infer_shapes(self.layer_specs(), self.input_shape)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"invalid architecture: {exc}") from exc

    def layer_specs(self) -> list[LayerSpec]:
        return [LayerSpec.from_dict(a) for a in self.arch]

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _from_plain(cls, d, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigInvalid(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        return cls.from_dict(d)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def paper_profile() -> RunConfig:
    return RunConfig()


def desk_profile() -> RunConfig:
    train = TrainConfig(epochs=3, batch_size=32)
    return RunConfig(
        profile="desk",
        out_dir="runs/desk",
        train=train,
        ccsrp=CcsrpConfig(T=4, ea=EaConfig(G=5), finetune=train),
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}


def profile(name: str) -> RunConfig:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ConfigInvalid(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


# ---------------------------------------------------------------------------
# strict (de)serialisation of nested frozen dataclasses

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def _from_plain(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigInvalid(f"{where}: expected an object, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for name, value in d.items():
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kw[name] = _from_plain(tp, value, f"{where}.{name}")
        else:
            kw[name] = _coerce(tp, value, f"{where}.{name}")
    try:
        return cls(**kw)
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc


def _coerce(tp, value, where):
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{where}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigInvalid(f"{where}: expected a string")
        return value
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigInvalid(f"{where}: expected a list")
        return tuple(value)
    return value
