"""Filter masks, masked views, structured materialization and FLOPs accounting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyLayer, MaskMismatch, SegmentLengthMismatch
from .snn import CONV, Layer, Network, forward


class FilterMask:
    """Per-conv-layer retain bits, bound to the structure of one network.

    Segment ``i`` belongs to the ``i``-th convolutional layer; bit ``j`` set
    means filter ``j`` is retained. No segment may be all zero.
    """

    __slots__ = ("segments", "structure")

    def __init__(self, segments: Sequence, structure: Optional[tuple] = None):
        segs = []
        for i, s in enumerate(segments):
            a = np.array(s, dtype=bool).reshape(-1)
            if a.size == 0 or not a.any():
                raise EmptyLayer(f"segment {i} retains no filter")
            a.setflags(write=False)
            segs.append(a)
        self.segments = tuple(segs)
        self.structure = structure

    def __len__(self):
        return len(self.segments)

    def __eq__(self, other):
        return (isinstance(other, FilterMask) and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.segments, other.segments)))

    def __hash__(self):
        return hash(tuple(s.tobytes() for s in self.segments))

    def __repr__(self):
        return f"FilterMask({self.to_text().strip()!r})"

    @property
    def lengths(self) -> tuple:
        return tuple(s.size for s in self.segments)

    def popcount(self) -> int:
        return int(sum(s.sum() for s in self.segments))

    def replace(self, index: int, bits) -> "FilterMask":
        bits = np.asarray(bits, dtype=bool)
        if bits.size != self.segments[index].size:
            raise SegmentLengthMismatch(
                f"segment {index} has {self.segments[index].size} bits, got {bits.size}")
        segs = list(self.segments)
        segs[index] = bits
        return FilterMask(segs, self.structure)

    def to_text(self) -> str:
        return "".join("".join("1" if b else "0" for b in s) + "\n" for s in self.segments)

    @classmethod
    def from_text(cls, text: str, structure: Optional[tuple] = None) -> "FilterMask":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        for ln in lines:
            if set(ln) - {"0", "1"}:
                raise ValueError(f"bad mask line {ln!r}")
        return cls([[c == "1" for c in ln] for ln in lines], structure)

    def check_bound(self, net: Network):
        lengths = tuple(net.layers[i].spec.out_channels for i in net.conv_indices())
        if lengths != self.lengths:
            raise MaskMismatch(f"mask lengths {self.lengths} do not match network {lengths}")
        if self.structure is not None and self.structure != net.structure():
            raise MaskMismatch("mask is bound to a different network")


def all_ones_mask(net: Network) -> FilterMask:
    segs = [np.ones(net.layers[i].spec.out_channels, dtype=bool) for i in net.conv_indices()]
    return FilterMask(segs, net.structure())


@dataclass(frozen=True)
class MaskedView:
    """A network whose pruned filters emit zero current (weights untouched)."""

    network: Network
    mask: FilterMask

    def __post_init__(self):
        self.mask.check_bound(self.network)

    @property
    def channel_masks(self) -> list:
        out: list = [None] * len(self.network.layers)
        for seg, li in zip(self.mask.segments, self.network.conv_indices()):
            if not seg.all():
                out[li] = seg
        return out

    def forward(self, batch, **kw):
        return forward(self, batch, **kw)


def apply_mask(net: Network, mask: FilterMask) -> MaskedView:
    return MaskedView(net, mask)


def _retained(view) -> list:
    """Retained output count per layer for a network or a masked view."""
    net = view.network
    counts = [l.spec.n_out for l in net.layers]
    masks = view.channel_masks
    if masks is not None:
        for li, m in enumerate(masks):
            if m is not None:
                counts[li] = int(np.count_nonzero(m))
    return counts


def materialize(net: Network, mask: FilterMask) -> Network:
    """Physically remove pruned filters and the input slices that fed on them."""
    mask.check_bound(net)
    keep_out = [None] * len(net.layers)
    for seg, li in zip(mask.segments, net.conv_indices()):
        if not seg.any():
            raise EmptyLayer(f"layer {li} would be emptied")
        keep_out[li] = np.flatnonzero(seg)
    shapes = net.output_shapes()
    layers = []
    prev_keep = None
    for li, layer in enumerate(net.layers):
        s, w, b = layer.spec, layer.weight, layer.bias
        if prev_keep is not None:
            if s.kind == CONV:
                w = w[:, prev_keep]
                s = _with(s, in_channels=len(prev_keep))
            else:
                # channel-major flatten: feature = c * (H*W) + pixel
                c, h, ww = shapes[li - 1]
                w = w.reshape(w.shape[0], c, h * ww)[:, prev_keep].reshape(w.shape[0], -1)
                s = _with(s, in_features=w.shape[1])
        keep = keep_out[li]
        if keep is not None:
            w = w[keep]
            b = b[keep]
            s = _with(s, out_channels=len(keep))
        layers.append(Layer(s, np.ascontiguousarray(w), np.ascontiguousarray(b)))
        prev_keep = keep
    return Network(layers, net.input_shape, net.lif, net.seed_tag)


def _with(spec, **changes):
    d = spec.to_dict()
    d.update(changes)
    return type(spec).from_dict(d)


@dataclass(frozen=True)
class FlopsReport:
    per_layer: tuple
    total_flops: int
    ratio_vs: Optional[float] = None

    @property
    def total_macs(self) -> int:
        return sum(self.per_layer)

    @property
    def reduction_pct(self) -> Optional[float]:
        """FLOPs reduction in percent relative to the reference, if one was given."""
        if self.ratio_vs is None:
            return None
        return 100.0 * (1.0 - self.ratio_vs)


def count_flops(view, reference=None) -> FlopsReport:
    """MACs per layer for one simulated timestep; FLOPs = 2 * MACs.

    Spike sparsity is ignored. For masked views, retained channel counts are
    used on both the output side of a layer and the input side of the next.
    """
    net = view.network
    retained = _retained(view)
    shapes = net.output_shapes()
    macs = []
    in_ch = net.input_shape[0]
    for li, layer in enumerate(net.layers):
        s = layer.spec
        out = retained[li]
        if s.kind == CONV:
            _, ho, wo = shapes[li]
            macs.append(out * in_ch * s.kernel_h * s.kernel_w * ho * wo)
        else:
            if li > 0 and net.layers[li - 1].spec.kind == CONV:
                _, h, w = shapes[li - 1]
                n_in = in_ch * h * w
            elif li == 0:
                n_in = s.in_features
            else:
                n_in = in_ch
            macs.append(out * n_in)
        in_ch = out
    total = 2 * sum(macs)
    ratio = None
    if reference is not None:
        ref = reference.total_flops if isinstance(reference, FlopsReport) \
            else count_flops(reference).total_flops
        ratio = total / ref
    return FlopsReport(tuple(int(m) for m in macs), int(total), ratio)
