"""Minimal spiking CNN engine.

Discrete-time leaky integrate-and-fire (LIF) layers over direct convolution
and dense affine maps, simulated for ``timesteps`` steps with the analog
input injected as current at every step. The last layer is a non-spiking
readout whose time-averaged membrane potential is used as the logits.

Two evaluation modes are supported:

``"spiking"``
    Heaviside spikes in the forward pass. Backward replaces the Heaviside
    derivative by a triangular surrogate ``max(0, 1 - |v - theta| / w) / w``.
``"soft"``
    The spike is replaced by the ramp ``clamp((v - theta) / w + 0.5, 0, 1)``
    in the forward pass too, so backward is the exact derivative. Used to
    check the BPTT machinery against finite differences.

Tensors are plain ``numpy`` arrays; float32 everywhere unless a network is
explicitly cast with :meth:`Network.astype`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import IncompatibleShapes, NonFiniteActivation, ShapeMismatch, StaleTrace

CONV = "conv"
DENSE = "dense"
MODES = ("spiking", "soft")


@dataclass(frozen=True)
class LifConfig:
    decay: float = 0.9
    threshold: float = 1.0
    timesteps: int = 4
    surrogate_width: float = 1.0
    reset: str = "hard_zero"

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if self.surrogate_width <= 0:
            raise ValueError("surrogate_width must be positive")
        if self.reset != "hard_zero":
            raise ValueError(f"unsupported reset {self.reset!r}")


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer, optionally followed by LIF dynamics.

    Conv layers use ``in_channels/out_channels/kernel_h/kernel_w/stride/padding``;
    dense layers use ``in_features/out_features``.
    """

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0
    spiking: bool = True

    def __post_init__(self):
        if self.kind == CONV:
            if self.in_channels < 1 or self.out_channels < 1:
                raise IncompatibleShapes("conv channels must be >= 1")
            if self.kernel_h < 1 or self.kernel_w < 1 or self.stride < 1 or self.padding < 0:
                raise IncompatibleShapes("invalid conv geometry")
        elif self.kind == DENSE:
            if self.in_features < 1 or self.out_features < 1:
                raise IncompatibleShapes("dense features must be >= 1")
        else:
            raise IncompatibleShapes(f"unknown layer kind {self.kind!r}")

    @classmethod
    def conv(cls, in_channels, out_channels, kernel=3, stride=1, padding=0, spiking=True):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        return cls(CONV, in_channels=in_channels, out_channels=out_channels,
                   kernel_h=kh, kernel_w=kw, stride=stride, padding=padding, spiking=spiking)

    @classmethod
    def dense(cls, in_features, out_features, spiking=True):
        return cls(DENSE, in_features=in_features, out_features=out_features, spiking=spiking)

    @property
    def n_out(self) -> int:
        return self.out_channels if self.kind == CONV else self.out_features

    @property
    def weight_shape(self) -> tuple:
        if self.kind == CONV:
            return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        return (self.out_features, self.in_features)

    @property
    def fan_in(self) -> int:
        if self.kind == CONV:
            return self.in_channels * self.kernel_h * self.kernel_w
        return self.in_features

    def to_dict(self) -> dict:
        if self.kind == CONV:
            keys = ("kind", "in_channels", "out_channels", "kernel_h", "kernel_w",
                    "stride", "padding", "spiking")
        else:
            keys = ("kind", "in_features", "out_features", "spiking")
        return {k: getattr(self, k) for k in keys}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def infer_shapes(specs: Sequence[LayerSpec], input_shape: Sequence[int]) -> list[tuple]:
    """Propagate ``input_shape`` (C, H, W) through ``specs``.

    Returns the per-layer output shape. Raises IncompatibleShapes on any
    mismatch, including a non-final non-spiking layer.
    """
    if len(specs) == 0:
        raise IncompatibleShapes("network needs at least one layer")
    for i, s in enumerate(specs):
        last = i == len(specs) - 1
        if s.spiking == last:
            raise IncompatibleShapes("exactly one non-spiking layer is required and it must be last")
    shape = tuple(int(d) for d in input_shape)
    out = []
    for i, s in enumerate(specs):
        if s.kind == CONV:
            if len(shape) != 3:
                raise IncompatibleShapes(f"layer {i}: conv after flatten is not supported")
            c, h, w = shape
            if c != s.in_channels:
                raise IncompatibleShapes(f"layer {i}: expected {s.in_channels} channels, got {c}")
            ho = (h + 2 * s.padding - s.kernel_h) // s.stride + 1
            wo = (w + 2 * s.padding - s.kernel_w) // s.stride + 1
            if ho < 1 or wo < 1:
                raise IncompatibleShapes(f"layer {i}: empty output map")
            shape = (s.out_channels, ho, wo)
        else:
            flat = int(np.prod(shape))
            if flat != s.in_features:
                raise IncompatibleShapes(f"layer {i}: expected {s.in_features} features, got {flat}")
            shape = (s.out_features,)
        out.append(shape)
    return out


@dataclass
class Layer:
    spec: LayerSpec
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class Network:
    layers: list[Layer]
    input_shape: tuple
    lif: LifConfig = field(default_factory=LifConfig)
    seed_tag: int = 0
    version: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        infer_shapes(self.specs, self.input_shape)
        for i, layer in enumerate(self.layers):
            if layer.weight.shape != layer.spec.weight_shape:
                raise IncompatibleShapes(f"layer {i}: weight shape {layer.weight.shape} "
                                         f"!= {layer.spec.weight_shape}")
            if layer.bias.shape != (layer.spec.n_out,):
                raise IncompatibleShapes(f"layer {i}: bias shape {layer.bias.shape}")

    # a plain network is its own (unmasked) view
    @property
    def network(self) -> "Network":
        return self

    @property
    def channel_masks(self):
        return None

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    @property
    def num_classes(self) -> int:
        return self.layers[-1].spec.n_out

    def output_shapes(self) -> list[tuple]:
        return infer_shapes(self.specs, self.input_shape)

    def conv_indices(self) -> list[int]:
        """Indices of the prunable (convolutional) layers."""
        return [i for i, s in enumerate(self.specs) if s.kind == CONV]

    def structure(self) -> tuple:
        """Hashable structural fingerprint (shapes only, not weights)."""
        return (self.input_shape, tuple(tuple(sorted(s.to_dict().items())) for s in self.specs))

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Network":
        layers = [Layer(l.spec, l.weight.copy(), l.bias.copy()) for l in self.layers]
        return Network(layers, self.input_shape, self.lif, self.seed_tag)

    def astype(self, dtype) -> "Network":
        layers = [Layer(l.spec, l.weight.astype(dtype), l.bias.astype(dtype)) for l in self.layers]
        return Network(layers, self.input_shape, self.lif, self.seed_tag)

    def bump_version(self):
        self.version += 1


def init_network(specs: Sequence[LayerSpec], input_shape: Sequence[int],
                 lif: Optional[LifConfig] = None, seed: int = 0) -> Network:
    """He-initialised network: weights ~ N(0, 2 / fan_in), zero biases."""
    infer_shapes(specs, input_shape)
    rng = np.random.default_rng(seed)
    layers = []
    for s in specs:
        std = np.sqrt(2.0 / s.fan_in)
        w = (rng.standard_normal(s.weight_shape) * std).astype(np.float32)
        layers.append(Layer(s, w, np.zeros(s.n_out, dtype=np.float32)))
    return Network(layers, tuple(input_shape), lif or LifConfig(), seed_tag=int(seed))


# ---------------------------------------------------------------------------
# neuron dynamics

def spike_fn(v_pre, cfg: LifConfig, mode: str):
    if mode == "spiking":
        return (v_pre >= cfg.threshold).astype(v_pre.dtype)
    return np.clip((v_pre - cfg.threshold) / cfg.surrogate_width + 0.5, 0.0, 1.0).astype(v_pre.dtype)


def spike_grad(v_pre, cfg: LifConfig, mode: str):
    w = cfg.surrogate_width
    if mode == "spiking":
        return (np.maximum(0.0, 1.0 - np.abs(v_pre - cfg.threshold) / w) / w).astype(v_pre.dtype)
    z = (v_pre - cfg.threshold) / w + 0.5
    return (((z > 0) & (z < 1)) / w).astype(v_pre.dtype)


def lif_step(v, current, cfg: LifConfig, mode: str = "spiking"):
    """One LIF update. Returns ``(v_next, spikes)``.

    In spiking mode the reset is exact: ``v_next`` is 0 wherever a spike fired.
    """
    v = np.asarray(v)
    current = np.asarray(current)
    if v.shape != current.shape:
        raise ShapeMismatch(f"membrane {v.shape} vs current {current.shape}")
    v_pre = cfg.decay * v + current
    s = spike_fn(v_pre, cfg, mode)
    return v_pre * (1 - s), s


# ---------------------------------------------------------------------------
# affine maps

def _windows(x, spec: LayerSpec):
    p = spec.padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    return win[:, :, ::spec.stride, ::spec.stride]  # [N, C, Ho, Wo, kh, kw]


def affine_forward(x, layer: Layer):
    s = layer.spec
    if s.kind == CONV:
        win = _windows(x, s)
        out = np.tensordot(win, layer.weight, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + layer.bias[None, :, None, None]
    return x.reshape(x.shape[0], -1) @ layer.weight.T + layer.bias


def affine_backward(x, dout, layer: Layer, need_input: bool = True):
    """Gradients of an affine map. ``x`` is the layer input, ``dout`` dL/d(output)."""
    s = layer.spec
    if s.kind == CONV:
        win = _windows(x, s)
        dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))
        db = dout.sum(axis=(0, 2, 3))
        dx = None
        if need_input:
            n, c, h, w = x.shape
            p, st = s.padding, s.stride
            ho, wo = dout.shape[2], dout.shape[3]
            dwin = np.tensordot(dout, layer.weight, axes=([1], [0]))  # [N, Ho, Wo, C, kh, kw]
            dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
            for i in range(s.kernel_h):
                for j in range(s.kernel_w):
                    dxp[:, :, i:i + st * (ho - 1) + 1:st, j:j + st * (wo - 1) + 1:st] += \
                        dwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        return dw, db, dx
    x2 = x.reshape(x.shape[0], -1)
    dw = dout.T @ x2
    db = dout.sum(axis=0)
    dx = (dout @ layer.weight).reshape(x.shape) if need_input else None
    return dw, db, dx


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class LayerTrace:
    inputs: np.ndarray      # [T*B, ...] stacked over time; [B, ...] for the first layer
    v_pre: Optional[np.ndarray]  # [T, B, ...] (spiking layers only)
    spikes: Optional[np.ndarray]


@dataclass
class ForwardTrace:
    mode: str
    lif: LifConfig
    layers: list[LayerTrace]
    masks: Optional[list]
    net_id: int
    net_version: int
    batch: int


def _resolve(view):
    net = view.network
    return net, view.channel_masks


def _mask_current(current, mask, spec: LayerSpec):
    if mask is None:
        return current
    m = mask.astype(current.dtype)
    if spec.kind == CONV:
        return current * m.reshape((1,) * (current.ndim - 3) + (-1, 1, 1))
    return current * m


def forward(view, batch, cfg: Optional[LifConfig] = None, record: bool = False,
            mode: str = "spiking"):
    """Simulate the network on ``batch`` [B, C, H, W].

    ``view`` is a :class:`Network` or anything exposing ``network`` and
    ``channel_masks`` (see ``pruning.MaskedView``). Returns ``(logits, trace)``
    where ``trace`` is None unless ``record`` is set.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    net, masks = _resolve(view)
    cfg = cfg or net.lif
    x = np.asarray(batch, dtype=net.dtype)
    if x.ndim != 4 or tuple(x.shape[1:]) != net.input_shape:
        raise ShapeMismatch(f"batch shape {x.shape} does not match input {net.input_shape}")
    T, B = cfg.timesteps, x.shape[0]
    traces = []
    seq = None  # previous layer's spikes [T, B, ...]
    n_layers = len(net.layers)
    logits = None
    for li, layer in enumerate(net.layers):
        mask = masks[li] if masks is not None else None
        if li == 0:
            inp = x
            cur = _mask_current(affine_forward(x, layer), mask, layer.spec)
            cur = np.broadcast_to(cur, (T,) + cur.shape)
        else:
            inp = seq.reshape((T * B,) + seq.shape[2:])
            cur = affine_forward(inp, layer)
            cur = _mask_current(cur.reshape((T, B) + cur.shape[1:]), mask, layer.spec)
        if li == n_layers - 1:
            logits = cur.mean(axis=0)
            traces.append(LayerTrace(inp, None, None))
            break
        v = np.zeros(cur.shape[1:], dtype=cur.dtype)
        v_pre_seq = np.empty(cur.shape, dtype=cur.dtype)
        s_seq = np.empty(cur.shape, dtype=cur.dtype)
        for t in range(T):
            vp = cfg.decay * v + cur[t]
            s = spike_fn(vp, cfg, mode)
            v = vp * (1 - s)
            v_pre_seq[t] = vp
            s_seq[t] = s
        traces.append(LayerTrace(inp, v_pre_seq if record else None, s_seq if record else None))
        seq = s_seq
    if not np.all(np.isfinite(logits)):
        raise NonFiniteActivation("non-finite logits")
    trace = None
    if record:
        trace = ForwardTrace(mode, cfg, traces, masks, id(net), net.version, B)
    return np.ascontiguousarray(logits), trace


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def backward(view, trace: ForwardTrace, grad_logits, need_input: bool = True) -> Gradients:
    """Backpropagation through time from ``grad_logits`` = dL/d(logits)."""
    net, masks = _resolve(view)
    if trace is None:
        raise StaleTrace("backward needs a trace recorded by forward(record=True)")
    if trace.net_id != id(net) or trace.net_version != net.version:
        raise StaleTrace("network changed since the trace was recorded")
    cfg = trace.lif
    T, B = cfg.timesteps, trace.batch
    g = np.asarray(grad_logits, dtype=net.dtype)
    if g.shape != (B, net.num_classes):
        raise ShapeMismatch(f"grad_logits shape {g.shape}")
    n = len(net.layers)
    dws = [None] * n
    dbs = [None] * n
    # dL/d(current) of the readout, per timestep
    dcur = np.broadcast_to(g / T, (T,) + g.shape)
    dx = ds = None
    for li in range(n - 1, -1, -1):
        layer = net.layers[li]
        lt = trace.layers[li]
        mask = masks[li] if masks is not None else None
        if li < n - 1:
            # ds holds dL/d(spikes) of this layer, shape [T, B, ...]
            fp_all = spike_grad(lt.v_pre, cfg, trace.mode)
            dcur = np.empty_like(ds)
            dv = np.zeros(ds.shape[1:], dtype=ds.dtype)
            for t in range(T - 1, -1, -1):
                vp, s, fp = lt.v_pre[t], lt.spikes[t], fp_all[t]
                dvp = ds[t] * fp + dv * ((1 - s) - vp * fp)
                dcur[t] = dvp
                dv = cfg.decay * dvp
            dcur = _mask_current(dcur, mask, layer.spec)
        if li == 0:
            d0 = dcur.sum(axis=0)
            dws[0], dbs[0], dx = affine_backward(lt.inputs, d0, layer, need_input)
        else:
            flat = dcur.reshape((T * B,) + dcur.shape[2:])
            dw, db, din = affine_backward(lt.inputs, np.ascontiguousarray(flat), layer)
            dws[li], dbs[li] = dw, db
            ds = din.reshape((T, B) + din.shape[1:])
    return Gradients(dws, dbs, dx)


def cross_entropy(logits, labels, reduction: str = "mean"):
    """Softmax cross-entropy. Returns ``(loss, dloss/dlogits)``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    losses = -logp[np.arange(n), labels]
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    if reduction == "mean":
        return float(losses.mean()), (grad / n).astype(logits.dtype)
    if reduction == "sum":
        return float(losses.sum()), grad.astype(logits.dtype)
    if reduction == "none":
        return losses, grad.astype(logits.dtype)
    raise ValueError(f"unknown reduction {reduction!r}")


def predict(view, x, batch_size: int = 256) -> np.ndarray:
    """Top-1 class predictions; ties resolve to the lowest class index."""
    out = []
    for i in range(0, len(x), batch_size):
        logits, _ = forward(view, x[i:i + batch_size])
        out.append(np.argmax(logits, axis=1))
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(out)


def accuracy(view, x, y, batch_size: int = 256) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.mean(predict(view, x, batch_size) == np.asarray(y)))
