"""Minimal deterministic CNN inference runtime with split execution.

A model is an ordered chain of layers. Inference can be cut at any valid
boundary ``k``: ``forward_prefix`` runs layers ``0..k-1`` (the device side),
``forward_suffix`` runs layers ``k..n`` (the server side), and their
composition is bitwise identical to ``forward`` for every valid cut.

Determinism contract
--------------------
Tensors are float32, C-order, shaped ``(C, H, W)`` for feature maps and
``(n,)`` for logits. Every layer computes in float64 over the float32
inputs and rounds the result to float32 once, with a fixed accumulation
order, so independently written runtimes produce bit-identical outputs:

* Conv2d: zero-pad, then for each output element accumulate
  ``w[co,ci,kh,kw] * x[ci, ho*s+kh, wo*s+kw]`` sequentially in
  ``(ci, kh, kw)`` order (channel-major, kernel row, kernel column),
  add the bias last, round to float32.
* DepthwiseConv2d: same, accumulating over ``(kh, kw)`` per channel.
* Affine: ``float32(scale*x + shift)`` per channel (one float64 multiply,
  one add).
* Relu6: ``min(max(x, 0), 6)`` directly on float32 (exact).
* GlobalAvgPool: per channel, sum spatial values sequentially in row-major
  order in float64, divide by ``H*W``, round to float32.
* Dense: per output, accumulate ``w[o,i] * x[i]`` sequentially over ``i``
  in float64, add bias last, round to float32.
* ResidualAdd: direct float32 addition.

Residual connections reference the *output* of an earlier layer by index.
A cut strictly inside the span the skip crosses would strand the skip
value on the device, so those ``k`` are rejected by split validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import (
    BadMagic,
    InvalidCut,
    NonFiniteActivation,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
)

MODEL_MAGIC = b"SPLITMDL"
MODEL_VERSION = 1

Shape = tuple[int, ...]


def _out_hw(size: int, kernel: int, stride: int, padding: int) -> int:
    reach = size + 2 * padding - kernel
    if reach < 0:
        raise ShapeMismatch(
            f"kernel {kernel} with padding {padding} exceeds input size {size}"
        )
    return reach // stride + 1


@dataclass(eq=False)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float32).reshape(
            self.out_channels, self.in_channels, self.kernel, self.kernel
        )
        self.bias = np.asarray(self.bias, dtype=np.float32).reshape(self.out_channels)

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeMismatch(f"Conv2d expects ({self.in_channels},H,W), got {shape}")
        _, h, w = shape
        return (
            self.out_channels,
            _out_hw(h, self.kernel, self.stride, self.padding),
            _out_hw(w, self.kernel, self.stride, self.padding),
        )


@dataclass(eq=False)
class DepthwiseConv2d:
    channels: int
    kernel: int
    stride: int
    padding: int
    weight: np.ndarray  # (c, k, k)
    bias: np.ndarray  # (c,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float32).reshape(
            self.channels, self.kernel, self.kernel
        )
        self.bias = np.asarray(self.bias, dtype=np.float32).reshape(self.channels)

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3 or shape[0] != self.channels:
            raise ShapeMismatch(f"DepthwiseConv2d expects ({self.channels},H,W), got {shape}")
        _, h, w = shape
        return (
            self.channels,
            _out_hw(h, self.kernel, self.stride, self.padding),
            _out_hw(w, self.kernel, self.stride, self.padding),
        )


@dataclass(eq=False)
class Affine:
    """Per-channel ``y = scale * x + shift`` (batch norm folded for inference)."""

    channels: int
    scale: np.ndarray  # (c,)
    shift: np.ndarray  # (c,)

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float32).reshape(self.channels)
        self.shift = np.asarray(self.shift, dtype=np.float32).reshape(self.channels)

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3 or shape[0] != self.channels:
            raise ShapeMismatch(f"Affine expects ({self.channels},H,W), got {shape}")
        return shape


@dataclass(eq=False)
class Relu6:
    def output_shape(self, shape: Shape) -> Shape:
        return shape


@dataclass(eq=False)
class GlobalAvgPool:
    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3:
            raise ShapeMismatch(f"GlobalAvgPool expects (C,H,W), got {shape}")
        return (shape[0], 1, 1)


@dataclass(eq=False)
class Dense:
    in_features: int
    out_features: int
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float32).reshape(
            self.out_features, self.in_features
        )
        self.bias = np.asarray(self.bias, dtype=np.float32).reshape(self.out_features)

    def output_shape(self, shape: Shape) -> Shape:
        if int(np.prod(shape)) != self.in_features:
            raise ShapeMismatch(
                f"Dense expects {self.in_features} inputs, got shape {shape}"
            )
        return (self.out_features,)


@dataclass(eq=False)
class ResidualAdd:
    """Adds the output of layer ``source_layer_index`` to the current tensor."""

    source_layer_index: int

    def output_shape(self, shape: Shape) -> Shape:
        return shape


Layer = Conv2d | DepthwiseConv2d | Affine | Relu6 | GlobalAvgPool | Dense | ResidualAdd

KIND_NAMES = {
    Conv2d: "Conv2d",
    DepthwiseConv2d: "DepthwiseConv2d",
    Affine: "Affine",
    Relu6: "Relu6",
    GlobalAvgPool: "GlobalAvgPool",
    Dense: "Dense",
    ResidualAdd: "ResidualAdd",
}


def layer_kind(layer: Layer) -> str:
    return KIND_NAMES[type(layer)]


@dataclass(eq=False)
class ModelMetadata:
    width_multiplier: float = 1.0
    input_size: int = 0
    name: str = ""


@dataclass(eq=False)
class ModelGraph:
    """An ordered layer chain with a validated shape chain.

    ``shape_chain[k]`` is the shape of ``x_k``, the tensor crossing cut ``k``
    (``shape_chain[0]`` is the input, ``shape_chain[len(layers)]`` the logits).
    """

    layers: list[Layer]
    input_shape: Shape
    class_count: int
    metadata: ModelMetadata = field(default_factory=ModelMetadata)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.input_shape) != 3 or any(s <= 0 for s in self.input_shape):
            raise ShapeMismatch(f"input shape must be (C,H,W) positive, got {self.input_shape}")
        self.shape_chain = self._build_shape_chain()
        final = self.shape_chain[-1]
        if final != (self.class_count,):
            raise ShapeMismatch(
                f"final output shape {final} != ({self.class_count},) logits"
            )

    def _build_shape_chain(self) -> list[Shape]:
        chain = [self.input_shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ResidualAdd):
                src = layer.source_layer_index
                if not 0 <= src < i:
                    raise ShapeMismatch(
                        f"layer {i}: residual source {src} not strictly earlier"
                    )
                if chain[src + 1] != chain[i]:
                    raise ShapeMismatch(
                        f"layer {i}: residual source shape {chain[src + 1]} "
                        f"!= input shape {chain[i]}"
                    )
            try:
                chain.append(layer.output_shape(chain[i]))
            except ShapeMismatch as exc:
                raise ShapeMismatch(f"layer {i} ({layer_kind(layer)}): {exc}") from exc
        return chain

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    def cut_shape(self, k: int) -> Shape:
        """Shape of the tensor transmitted at cut ``k``."""
        return self.shape_chain[k]

    def residual_spans(self) -> list[tuple[int, int]]:
        """(source, index) pairs for every ResidualAdd layer."""
        return [
            (layer.source_layer_index, i)
            for i, layer in enumerate(self.layers)
            if isinstance(layer, ResidualAdd)
        ]

    def is_valid_cut(self, k: int) -> bool:
        """True when the suffix from ``k`` can run on the transmitted tensor alone.

        The skip value consumed by a ResidualAdd at index ``r`` is the output
        of layer ``s``; cuts with ``s + 2 <= k <= r`` strand it locally.
        """
        if not 0 <= k <= self.layer_count:
            return False
        return all(not (s + 2 <= k <= r) for s, r in self.residual_spans())

    def valid_cut_points(self) -> list[int]:
        return [k for k in range(self.layer_count + 1) if self.is_valid_cut(k)]

    def validate_split(self, k: int) -> int:
        if not isinstance(k, (int, np.integer)):
            raise InvalidCut(f"split index must be an integer, got {k!r}")
        k = int(k)
        if not 0 <= k <= self.layer_count:
            raise InvalidCut(f"k={k} outside [0, {self.layer_count}]")
        if not self.is_valid_cut(k):
            raise InvalidCut(f"k={k} falls inside a residual span")
        return k


def apply_layer(layer: Layer, x: np.ndarray, skip_source: np.ndarray | None = None) -> np.ndarray:
    """Apply one layer; ``skip_source`` must be given iff the layer is a ResidualAdd."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = _apply_layer_unchecked(layer, x, skip_source)
    if not np.isfinite(out).all():
        raise NonFiniteActivation(f"{layer_kind(layer)} produced NaN/Inf")
    return out


def _apply_layer_unchecked(
    layer: Layer, x: np.ndarray, skip_source: np.ndarray | None = None
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if isinstance(layer, ResidualAdd):
        if skip_source is None:
            raise ShapeMismatch("ResidualAdd requires its skip source tensor")
        if skip_source.shape != x.shape:
            raise ShapeMismatch(
                f"residual shapes differ: {skip_source.shape} vs {x.shape}"
            )
        out = x + np.asarray(skip_source, dtype=np.float32)
    elif skip_source is not None:
        raise ShapeMismatch(f"{layer_kind(layer)} takes no skip source")
    elif isinstance(layer, Conv2d):
        out = _conv2d(layer, x)
    elif isinstance(layer, DepthwiseConv2d):
        out = _depthwise(layer, x)
    elif isinstance(layer, Affine):
        layer.output_shape(x.shape)
        y = layer.scale.astype(np.float64)[:, None, None] * x.astype(np.float64)
        y += layer.shift.astype(np.float64)[:, None, None]
        out = y.astype(np.float32)
    elif isinstance(layer, Relu6):
        out = np.minimum(np.maximum(x, np.float32(0.0)), np.float32(6.0))
    elif isinstance(layer, GlobalAvgPool):
        layer.output_shape(x.shape)
        c, h, w = x.shape
        flat = x.reshape(c, h * w).astype(np.float64)
        acc = np.zeros(c, dtype=np.float64)
        for pos in range(h * w):  # row-major sequential sum
            acc += flat[:, pos]
        out = (acc / float(h * w)).astype(np.float32).reshape(c, 1, 1)
    elif isinstance(layer, Dense):
        layer.output_shape(x.shape)
        v = x.reshape(-1).astype(np.float64)
        w64 = layer.weight.astype(np.float64)
        acc = np.zeros(layer.out_features, dtype=np.float64)
        for i in range(layer.in_features):
            acc += w64[:, i] * v[i]
        acc += layer.bias.astype(np.float64)
        out = acc.astype(np.float32)
    else:
        raise TypeError(f"unknown layer type {type(layer)!r}")
    return out


def _conv2d(layer: Conv2d, x: np.ndarray) -> np.ndarray:
    c_out, h_out, w_out = layer.output_shape(x.shape)
    s, p, k = layer.stride, layer.padding, layer.kernel
    xpad = np.pad(x, ((0, 0), (p, p), (p, p))).astype(np.float64)
    w64 = layer.weight.astype(np.float64)
    acc = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    h_stop = (h_out - 1) * s + 1
    w_stop = (w_out - 1) * s + 1
    for ci in range(layer.in_channels):
        for kh in range(k):
            for kw in range(k):
                window = xpad[ci, kh : kh + h_stop : s, kw : kw + w_stop : s]
                acc += w64[:, ci, kh, kw][:, None, None] * window
    acc += layer.bias.astype(np.float64)[:, None, None]
    return acc.astype(np.float32)


def _depthwise(layer: DepthwiseConv2d, x: np.ndarray) -> np.ndarray:
    c, h_out, w_out = layer.output_shape(x.shape)
    s, p, k = layer.stride, layer.padding, layer.kernel
    xpad = np.pad(x, ((0, 0), (p, p), (p, p))).astype(np.float64)
    w64 = layer.weight.astype(np.float64)
    acc = np.zeros((c, h_out, w_out), dtype=np.float64)
    h_stop = (h_out - 1) * s + 1
    w_stop = (w_out - 1) * s + 1
    for kh in range(k):
        for kw in range(k):
            window = xpad[:, kh : kh + h_stop : s, kw : kw + w_stop : s]
            acc += w64[:, kh, kw][:, None, None] * window
    acc += layer.bias.astype(np.float64)[:, None, None]
    return acc.astype(np.float32)


def _run_layers(model: ModelGraph, x: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Apply layers ``start..stop-1``; ``x`` is the tensor at cut ``start``."""
    needed = {s + 1 for s, r in model.residual_spans() if start <= r < stop}
    cache: dict[int, np.ndarray] = {}
    if start in needed:
        cache[start] = x
    for i in range(start, stop):
        layer = model.layers[i]
        if isinstance(layer, ResidualAdd):
            x = apply_layer(layer, x, cache[layer.source_layer_index + 1])
        else:
            x = apply_layer(layer, x)
        if i + 1 in needed:
            cache[i + 1] = x
    return x


def _check_input(model: ModelGraph, x: np.ndarray, expected: Shape) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.shape != expected:
        raise ShapeMismatch(f"input shape {x.shape} != expected {expected}")
    return x


def forward(model: ModelGraph, x: np.ndarray) -> np.ndarray:
    """Full inference: returns the logits vector."""
    x = _check_input(model, x, model.input_shape)
    return _run_layers(model, x, 0, model.layer_count)


def forward_prefix(model: ModelGraph, x: np.ndarray, k: int) -> np.ndarray:
    """Device side: layers ``0..k-1``. ``k=0`` returns the input unchanged."""
    k = model.validate_split(k)
    x = _check_input(model, x, model.input_shape)
    return _run_layers(model, x, 0, k)


def forward_suffix(model: ModelGraph, x_k: np.ndarray, k: int) -> np.ndarray:
    """Server side: layers ``k..n`` on the transmitted tensor."""
    k = model.validate_split(k)
    x_k = _check_input(model, x_k, model.cut_shape(k))
    return _run_layers(model, x_k, k, model.layer_count)


def predict(model: ModelGraph, images: np.ndarray) -> np.ndarray:
    """Argmax labels for a batch of images shaped ``(n, C, H, W)``."""
    return np.array([int(np.argmax(forward(model, img))) for img in images])


def forward_collect(model: ModelGraph, x: np.ndarray, cuts) -> dict[int, np.ndarray]:
    """One full pass capturing ``x_k`` at each requested cut.

    Runs the same layer sequence as forward, so each captured tensor is
    bitwise equal to ``forward_prefix(model, x, k)``.
    """
    cuts = sorted(set(model.validate_split(k) for k in cuts))
    x = _check_input(model, x, model.input_shape)
    needed = {s + 1 for s, r in model.residual_spans()}
    cache: dict[int, np.ndarray] = {0: x}
    captured: dict[int, np.ndarray] = {}
    if 0 in cuts:
        captured[0] = x
    for i, layer in enumerate(model.layers):
        if isinstance(layer, ResidualAdd):
            x = apply_layer(layer, x, cache[layer.source_layer_index + 1])
        else:
            x = apply_layer(layer, x)
        if i + 1 in needed:
            cache[i + 1] = x
        if i + 1 in cuts:
            captured[i + 1] = x
    return captured


# ---------------------------------------------------------------------------
# SPLITMDL file format, version 1, little-endian.
#
#   magic "SPLITMDL" | version u32 | name u16+utf8 | width_multiplier f32
#   | input_size u32 | class_count u32 | input shape 3xu32 | layer count u32
#   | per layer: kind u8, fixed param block, weights u64+f32[], bias u64+f32[]
#   | FNV-1a-64 of all preceding bytes
#
# Kind tags: 1 Conv2d, 2 DepthwiseConv2d, 3 Affine, 4 Relu6, 5 GlobalAvgPool,
# 6 Dense, 7 ResidualAdd. Weight layouts are row-major in the natural shapes
# (Conv2d (out,in,k,k); DepthwiseConv2d (c,k,k); Dense (out,in); Affine stores
# scale as the weight blob and shift as the bias blob).
# ---------------------------------------------------------------------------

_KIND_TAGS = {
    Conv2d: 1,
    DepthwiseConv2d: 2,
    Affine: 3,
    Relu6: 4,
    GlobalAvgPool: 5,
    Dense: 6,
    ResidualAdd: 7,
}


def save_model(model: ModelGraph, path) -> None:
    w = binio.Writer()
    w.raw(MODEL_MAGIC)
    w.u32(MODEL_VERSION)
    name = model.metadata.name.encode("utf-8")
    w.u16(len(name))
    w.raw(name)
    w.f32(model.metadata.width_multiplier)
    w.u32(model.metadata.input_size)
    w.u32(model.class_count)
    for s in model.input_shape:
        w.u32(s)
    w.u32(model.layer_count)
    for layer in model.layers:
        w.u8(_KIND_TAGS[type(layer)])
        weight = bias = np.zeros(0, dtype=np.float32)
        if isinstance(layer, Conv2d):
            for v in (layer.in_channels, layer.out_channels, layer.kernel,
                      layer.stride, layer.padding):
                w.u32(v)
            weight, bias = layer.weight, layer.bias
        elif isinstance(layer, DepthwiseConv2d):
            for v in (layer.channels, layer.kernel, layer.stride, layer.padding):
                w.u32(v)
            weight, bias = layer.weight, layer.bias
        elif isinstance(layer, Affine):
            w.u32(layer.channels)
            weight, bias = layer.scale, layer.shift
        elif isinstance(layer, Dense):
            w.u32(layer.in_features)
            w.u32(layer.out_features)
            weight, bias = layer.weight, layer.bias
        elif isinstance(layer, ResidualAdd):
            w.u32(layer.source_layer_index)
        w.u64(weight.size)
        w.f32_array(weight.reshape(-1))
        w.u64(bias.size)
        w.f32_array(bias.reshape(-1))
    with open(path, "wb") as fh:
        fh.write(w.finish_with_checksum())


def _read_blob(r: binio.Reader, expected: int, what: str) -> np.ndarray:
    n = r.u64()
    if n != expected:
        raise ShapeMismatch(f"{what}: blob length {n} != expected {expected}")
    return r.f32_array(n)


def load_model(path) -> ModelGraph:
    """Load a SPLITMDL file; loading is byte-deterministic."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MODEL_MAGIC):
        raise TruncatedFile(f"{path}: shorter than the magic header")
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise BadMagic(f"{path}: not a SPLITMDL file")
    body = binio.check_trailing_fnv(data)
    r = binio.Reader(body)
    r.raw(len(MODEL_MAGIC))
    version = r.u32()
    if version != MODEL_VERSION:
        raise VersionUnsupported(f"{path}: version {version}")
    name = r.raw(r.u16()).decode("utf-8")
    width_multiplier = r.f32()
    input_size = r.u32()
    class_count = r.u32()
    input_shape = (r.u32(), r.u32(), r.u32())
    layer_count = r.u32()
    layers: list[Layer] = []
    for idx in range(layer_count):
        tag = r.u8()
        what = f"layer {idx}"
        if tag == 1:
            cin, cout, kernel, stride, padding = (r.u32() for _ in range(5))
            weight = _read_blob(r, cout * cin * kernel * kernel, what)
            bias = _read_blob(r, cout, what)
            layers.append(Conv2d(cin, cout, kernel, stride, padding, weight, bias))
        elif tag == 2:
            ch, kernel, stride, padding = (r.u32() for _ in range(4))
            weight = _read_blob(r, ch * kernel * kernel, what)
            bias = _read_blob(r, ch, what)
            layers.append(DepthwiseConv2d(ch, kernel, stride, padding, weight, bias))
        elif tag == 3:
            ch = r.u32()
            scale = _read_blob(r, ch, what)
            shift = _read_blob(r, ch, what)
            layers.append(Affine(ch, scale, shift))
        elif tag == 4:
            _read_blob(r, 0, what)
            _read_blob(r, 0, what)
            layers.append(Relu6())
        elif tag == 5:
            _read_blob(r, 0, what)
            _read_blob(r, 0, what)
            layers.append(GlobalAvgPool())
        elif tag == 6:
            fin, fout = r.u32(), r.u32()
            weight = _read_blob(r, fout * fin, what)
            bias = _read_blob(r, fout, what)
            layers.append(Dense(fin, fout, weight, bias))
        elif tag == 7:
            src = r.u32()
            _read_blob(r, 0, what)
            _read_blob(r, 0, what)
            layers.append(ResidualAdd(src))
        else:
            raise ShapeMismatch(f"{what}: unknown kind tag {tag}")
    if r.remaining():
        raise ShapeMismatch(f"{path}: {r.remaining()} unparsed bytes before checksum")
    metadata = ModelMetadata(width_multiplier, input_size, name)
    return ModelGraph(layers, input_shape, class_count, metadata)
