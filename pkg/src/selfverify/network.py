"""Straight-line CNNs: layer specs, forward inference and input gradients.

Tensors are plain numpy arrays. Compute runs in the dtype of the network
weights (float32 normally; :meth:`Network.astype` gives a float64 shadow copy
for gradient checking). Activations are NCHW internally; single-sample calls
drop the batch axis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import NonFiniteError, ObjectiveError, ShapeError

LAYER_KINDS = ("conv2d", "relu", "maxpool2d", "avgpool2d", "dense", "softmax", "flatten")
PARAM_KINDS = ("conv2d", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: tuple[int, int] | None = None
    stride: int = 1
    padding: int = 0
    size: int | tuple[int, int] | None = None  # pooling window; (h, w) allowed for avgpool2d
    in_features: int | None = None
    out_features: int | None = None
    last_conv: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if isinstance(self.size, (list, tuple)):
            sh, sw = (int(v) for v in self.size)
            if self.kind == "maxpool2d" and sh != sw:
                raise ShapeError("maxpool2d needs a square window")
            object.__setattr__(self, "size", sh if sh == sw else (sh, sw))

    @property
    def window(self):
        """Pooling window as (h, w)."""
        return self.size if isinstance(self.size, tuple) else (self.size, self.size)

    def to_dict(self):
        d = {"kind": self.kind}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "kind" or v is None or v == f.default:
                continue
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class NetworkSpec:
    layers: list[LayerSpec]
    class_labels: list[str]
    input_shape: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = list(self.layers)
        self.class_labels = list(self.class_labels)

    @property
    def num_classes(self):
        return len(self.class_labels)

    def output_shapes(self):
        """Propagate shapes through the layer list, validating declared widths."""
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            shape = _layer_output_shape(i, layer, shape)
            shapes.append(shape)
        return shapes

    def validate(self):
        shapes = self.output_shapes()
        if not self.layers:
            raise ShapeError("network has no layers")
        if len(shapes[-1]) != 1 or shapes[-1][0] != self.num_classes:
            raise ShapeError(
                f"final output shape {shapes[-1]} does not match {self.num_classes} class labels")
        flagged = [i for i, l in enumerate(self.layers) if l.last_conv]
        if len(flagged) != 1:
            raise ShapeError(f"exactly one layer must be flagged last_conv, found {len(flagged)}")
        i = flagged[0]
        kind = self.layers[i].kind
        if kind in ("maxpool2d", "avgpool2d"):
            prev = [l.kind for l in self.layers[:i]]
            while prev and prev[-1] == "relu":
                prev.pop()
            if not prev or prev[-1] != "conv2d":
                raise ShapeError("last_conv pooling layer must directly follow a conv2d")
        elif kind != "conv2d":
            raise ShapeError(f"last_conv flag on a {kind} layer")
        return shapes

    @property
    def last_conv_index(self):
        """Layer whose output is the last-conv attachment point (post-ReLU when a ReLU follows)."""
        i = next(i for i, l in enumerate(self.layers) if l.last_conv)
        if self.layers[i].kind == "conv2d" and i + 1 < len(self.layers) \
                and self.layers[i + 1].kind == "relu":
            return i + 1
        return i


def _layer_output_shape(i, layer, shape):
    kind = layer.kind
    where = f"layer {i} ({kind})"
    if kind in ("conv2d", "maxpool2d", "avgpool2d"):
        if len(shape) != 3:
            raise ShapeError(f"{where} expects (C,H,W) input, got {shape}")
        c, h, w = shape
        if kind == "conv2d":
            if layer.in_channels is not None and layer.in_channels != c:
                raise ShapeError(f"{where} declares {layer.in_channels} input channels, receives {c}")
            if layer.out_channels is None or layer.kernel is None:
                raise ShapeError(f"{where} missing out_channels/kernel")
            kh, kw = layer.kernel
            oh = (h + 2 * layer.padding - kh) // layer.stride + 1
            ow = (w + 2 * layer.padding - kw) // layer.stride + 1
            out = (layer.out_channels, oh, ow)
        else:
            if layer.size is None:
                raise ShapeError(f"{where} missing pool size")
            stride = layer.stride
            sh, sw = layer.window
            oh = (h - sh) // stride + 1
            ow = (w - sw) // stride + 1
            out = (c, oh, ow)
        if min(out) < 1:
            raise ShapeError(f"{where} produces empty output from {shape}")
        return out
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"{where} expects flat input, got {shape}")
        if layer.in_features is not None and layer.in_features != shape[0]:
            raise ShapeError(f"{where} declares {layer.in_features} inputs, receives {shape[0]}")
        if layer.out_features is None:
            raise ShapeError(f"{where} missing out_features")
        return (layer.out_features,)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "softmax" and len(shape) != 1:
        raise ShapeError(f"{where} expects flat input, got {shape}")
    return shape


def expected_param_shapes(spec: NetworkSpec):
    """Per layer, the expected {"weight": shape, "bias": shape} (empty for parameter-free layers)."""
    shape = spec.input_shape
    out = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv2d":
            kh, kw = layer.kernel
            out.append({"weight": (layer.out_channels, shape[0], kh, kw),
                        "bias": (layer.out_channels,)})
        elif layer.kind == "dense":
            out.append({"weight": (layer.out_features, shape[0]), "bias": (layer.out_features,)})
        else:
            out.append({})
        shape = _layer_output_shape(i, layer, shape)
    return out


class Network:
    """A validated :class:`NetworkSpec` plus its (read-only) parameters."""

    def __init__(self, spec: NetworkSpec, params: Sequence[dict], dtype=np.float32):
        spec.validate()
        expected = expected_param_shapes(spec)
        if len(params) != len(spec.layers):
            raise ShapeError(f"{len(params)} parameter sets for {len(spec.layers)} layers")
        frozen = []
        for i, (want, got) in enumerate(zip(expected, params)):
            if set(want) != set(got):
                raise ShapeError(f"layer {i} expects parameters {sorted(want)}, got {sorted(got)}")
            layer_params = {}
            for name, shp in want.items():
                arr = np.ascontiguousarray(got[name], dtype=dtype)
                if arr.shape != shp:
                    raise ShapeError(f"layer {i} {name} has shape {arr.shape}, expected {shp}")
                if not np.isfinite(arr).all():
                    raise NonFiniteError(f"layer {i} {name} contains non-finite values")
                arr.flags.writeable = False
                layer_params[name] = arr
            frozen.append(layer_params)
        self.spec = spec
        self.params = frozen
        self.dtype = np.dtype(dtype)
        self._shapes = spec.output_shapes()

    @property
    def input_shape(self):
        return self.spec.input_shape

    @property
    def class_labels(self):
        return self.spec.class_labels

    @property
    def last_conv_index(self):
        return self.spec.last_conv_index

    @property
    def last_conv_shape(self):
        return self._shapes[self.spec.last_conv_index]

    def layer_shape(self, i):
        return self._shapes[i]

    def astype(self, dtype):
        return Network(self.spec, self.params, dtype=dtype)


@dataclass
class ActivationTrace:
    """Post-activation outputs of every layer for one input."""

    outputs: list[np.ndarray]
    last_conv_index: int

    @property
    def last_conv(self):
        """The (K, H, W) map stack at the last-conv attachment point."""
        return self.outputs[self.last_conv_index]

    @property
    def num_channels(self):
        return self.last_conv.shape[0]


@dataclass(frozen=True)
class Objective:
    """Scalar objective: one unit of one layer's output, times ``sign``.

    Channels of spatial layers are reduced by their spatial mean.
    """

    layer: int
    index: int
    sign: float = 1.0

    @classmethod
    def logit(cls, net, index, sign=1.0):
        last = len(net.spec.layers) - 1
        if net.spec.layers[last].kind == "softmax":
            last -= 1
        return cls(last, index, sign)

    @classmethod
    def last_conv(cls, net, channel, sign=1.0):
        return cls(net.last_conv_index, channel, sign)

    def check(self, net):
        n = len(net.spec.layers)
        if not 0 <= self.layer < n:
            raise ObjectiveError(f"objective layer {self.layer} outside 0..{n - 1}")
        width = net.layer_shape(self.layer)[0]
        if not 0 <= self.index < width:
            raise ObjectiveError(
                f"objective index {self.index} outside layer {self.layer} width {width}")

    def value(self, out):
        """Per-sample objective from a batched layer output."""
        sel = out[:, self.index]
        if sel.ndim > 1:
            sel = sel.reshape(sel.shape[0], -1).mean(axis=1)
        return self.sign * sel

    def seed_gradient(self, out):
        g = np.zeros_like(out)
        if out.ndim == 4:
            g[:, self.index] = self.sign / (out.shape[2] * out.shape[3])
        else:
            g[:, self.index] = self.sign
        return g


def _as_batch(net, x, batched):
    x = np.asarray(x)
    want = net.input_shape
    if batched:
        if x.ndim != len(want) + 1 or tuple(x.shape[1:]) != want:
            raise ShapeError(f"expected batch of {want}, got {x.shape}")
        xb = x
    else:
        if tuple(x.shape) != want:
            raise ShapeError(f"expected input shape {want}, got {x.shape}")
        xb = x[None]
    if not np.isfinite(xb).all():
        raise NonFiniteError("input contains non-finite values")
    return np.ascontiguousarray(xb, dtype=net.dtype)


def _forward(net, xb, upto=None):
    """Run layers 0..upto on a batch. Returns (outputs, caches)."""
    layers = net.spec.layers
    stop = len(layers) if upto is None else upto + 1
    outputs, caches = [], []
    h = xb
    with np.errstate(over="raise", invalid="raise"):
        for i in range(stop):
            layer, p = layers[i], net.params[i]
            cache = None
            try:
                if layer.kind == "conv2d":
                    h = kernels.conv2d_forward(h, p["weight"], p["bias"], layer.stride, layer.padding)
                elif layer.kind == "relu":
                    h = np.maximum(h, 0)
                elif layer.kind == "maxpool2d":
                    h, cache = kernels.maxpool_forward(h, layer.size, layer.stride)
                elif layer.kind == "avgpool2d":
                    h = _avgpool(h, layer.window, layer.stride)
                elif layer.kind == "dense":
                    h = h @ p["weight"].T + p["bias"]
                elif layer.kind == "softmax":
                    z = np.exp(h - h.max(axis=1, keepdims=True))
                    h = z / z.sum(axis=1, keepdims=True)
                elif layer.kind == "flatten":
                    h = h.reshape(h.shape[0], -1)
            except FloatingPointError as exc:
                raise NonFiniteError(f"layer {i} ({layer.kind}) overflowed") from exc
            if not np.isfinite(h).all():
                raise NonFiniteError(f"layer {i} ({layer.kind}) produced non-finite values")
            h = np.ascontiguousarray(h)
            outputs.append(h)
            caches.append(cache)
    return outputs, caches


def _avgpool(x, window, stride):
    sh, sw = window
    n, c, hh, ww = x.shape
    oh, ow = (hh - sh) // stride + 1, (ww - sw) // stride + 1
    acc = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for i in range(sh):
        for j in range(sw):
            acc += x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return acc / x.dtype.type(sh * sw)


def _avgpool_backward(g, window, stride, hh, ww):
    sh, sw = window
    n, c, oh, ow = g.shape
    gin = np.zeros((n, c, hh, ww), dtype=g.dtype)
    share = g / g.dtype.type(sh * sw)
    for i in range(sh):
        for j in range(sw):
            gin[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += share
    return gin


def _backward(net, xb, outputs, caches, upto, g):
    """Reverse sweep from the output of layer ``upto`` down to the input."""
    layers = net.spec.layers
    for i in range(upto, -1, -1):
        layer, p = layers[i], net.params[i]
        inp = xb if i == 0 else outputs[i - 1]
        if layer.kind == "conv2d":
            g = kernels.conv2d_backward_input(np.ascontiguousarray(g), p["weight"],
                                              inp.shape[2], inp.shape[3],
                                              layer.stride, layer.padding)
        elif layer.kind == "relu":
            g = g * (inp > 0)
        elif layer.kind == "maxpool2d":
            g = kernels.maxpool_backward(np.ascontiguousarray(g), caches[i],
                                         inp.shape[2], inp.shape[3])
        elif layer.kind == "avgpool2d":
            g = _avgpool_backward(g, layer.window, layer.stride, inp.shape[2], inp.shape[3])
        elif layer.kind == "dense":
            g = g @ p["weight"]
        elif layer.kind == "softmax":
            s = outputs[i]
            g = s * (g - (g * s).sum(axis=1, keepdims=True))
        elif layer.kind == "flatten":
            g = g.reshape(inp.shape)
    return g


def forward(net: Network, x, trace=False):
    """Logits for one input of shape ``net.input_shape``; optionally with its :class:`ActivationTrace`."""
    outputs, _ = _forward(net, _as_batch(net, x, False))
    logits = outputs[-1][0]
    if not trace:
        return logits, None
    return logits, ActivationTrace([o[0] for o in outputs], net.last_conv_index)


def forward_batch(net: Network, xs, trace=False):
    """Batched :func:`forward`. The trace, when requested, is the list of batched layer outputs."""
    outputs, _ = _forward(net, _as_batch(net, xs, True))
    return outputs[-1], (outputs if trace else None)


def last_conv_batch(net: Network, xs):
    """(logits, last-conv maps) for a batch; maps have shape (N, K, H, W)."""
    outputs, _ = _forward(net, _as_batch(net, xs, True))
    return outputs[-1], outputs[net.last_conv_index]


def objective_and_gradient(net: Network, xs, objective: Objective, batched=True):
    """Per-sample objective values and d(objective)/d(input) for a batch.

    Samples are independent, so the gradient of the batch sum gives each
    sample's own gradient.
    """
    objective.check(net)
    xb = _as_batch(net, xs, batched)
    outputs, caches = _forward(net, xb, upto=objective.layer)
    out = outputs[objective.layer]
    values = objective.value(out)
    g = _backward(net, xb, outputs, caches, objective.layer, objective.seed_gradient(out))
    if not np.isfinite(g).all():
        raise NonFiniteError("input gradient is non-finite")
    if not batched:
        return values[0], g[0]
    return values, g


def input_gradient(net: Network, x, objective: Objective):
    """Gradient of the selected scalar objective with respect to a single input."""
    return objective_and_gradient(net, x, objective, batched=False)[1]


def loss_gradient(net: Network, xs, labels, targeted=False):
    """Cross-entropy loss per sample and its input gradient (for noise attacks).

    ``targeted`` flips the sign so that ascending the returned gradient moves
    toward ``labels`` instead of away from them.
    """
    xb = _as_batch(net, xs, True)
    outputs, caches = _forward(net, xb)
    layers = net.spec.layers
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.arange(len(labels))
    if layers[-1].kind == "softmax":
        # gradient through the softmax layer itself
        probs = outputs[-1]
        loss = -np.log(np.maximum(probs[idx, labels], np.finfo(probs.dtype).tiny))
        g = np.zeros_like(probs)
        g[idx, labels] = -1.0 / np.maximum(probs[idx, labels], np.finfo(probs.dtype).tiny)
        upto = len(layers) - 1
    else:
        z = outputs[-1]
        zmax = z.max(axis=1, keepdims=True)
        e = np.exp(z - zmax)
        probs = e / e.sum(axis=1, keepdims=True)
        loss = -(z[idx, labels] - zmax[:, 0] - np.log(e.sum(axis=1)))
        g = probs.copy()
        g[idx, labels] -= 1
        upto = len(layers) - 1
    if targeted:
        g = -g
        loss = -loss
    gin = _backward(net, xb, outputs, caches, upto, g.astype(net.dtype))
    return loss, gin
