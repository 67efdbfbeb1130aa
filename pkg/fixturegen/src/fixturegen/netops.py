"""Reference forward pass over layer dicts, plus an instrumented FLOP count.

The arithmetic follows the cross-implementation determinism contract of
the model file format: every layer computes in float64 over float32
inputs and rounds to float32 once; convolutions accumulate taps in
(input channel, kernel row, kernel col) order with the bias added last;
pooling and dense layers accumulate sequentially over their input index.
The batch axis is vectorized, which cannot change per-image results
because all accumulation happens per output element.
"""

from __future__ import annotations

import numpy as np


def _conv_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def layer_output_shape(layer: dict, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = layer["kind"]
    if kind == "Conv2d":
        c, h, w = shape
        assert c == layer["cin"]
        return (
            layer["cout"],
            _conv_out(h, layer["k"], layer["s"], layer["p"]),
            _conv_out(w, layer["k"], layer["s"], layer["p"]),
        )
    if kind == "DepthwiseConv2d":
        c, h, w = shape
        assert c == layer["c"]
        return (
            c,
            _conv_out(h, layer["k"], layer["s"], layer["p"]),
            _conv_out(w, layer["k"], layer["s"], layer["p"]),
        )
    if kind == "GlobalAvgPool":
        return (shape[0], 1, 1)
    if kind == "Dense":
        assert int(np.prod(shape)) == layer["fin"]
        return (layer["fout"],)
    return shape


def shape_chain(model: dict) -> list[tuple[int, ...]]:
    chain = [model["input_shape"]]
    for layer in model["layers"]:
        chain.append(layer_output_shape(layer, chain[-1]))
    return chain


def _apply_conv(layer: dict, x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    cout, h_out, w_out = layer_output_shape(layer, x.shape[1:])
    k, s, p = layer["k"], layer["s"], layer["p"]
    cin = layer["cin"]
    xpad = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))).astype(np.float64)
    w64 = (
        np.asarray(layer["weight"], dtype=np.float32)
        .reshape(cout, cin, k, k)
        .astype(np.float64)
    )
    b64 = np.asarray(layer["bias"], dtype=np.float32).astype(np.float64)
    acc = np.zeros((n, cout, h_out, w_out), dtype=np.float64)
    h_stop = (h_out - 1) * s + 1
    w_stop = (w_out - 1) * s + 1
    for ci in range(cin):
        for kh in range(k):
            for kw in range(k):
                window = xpad[:, ci, kh : kh + h_stop : s, kw : kw + w_stop : s]
                acc += w64[:, ci, kh, kw][None, :, None, None] * window[:, None]
    acc += b64[None, :, None, None]
    return acc.astype(np.float32)


def _apply_depthwise(layer: dict, x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    c, h_out, w_out = layer_output_shape(layer, x.shape[1:])
    k, s, p = layer["k"], layer["s"], layer["p"]
    xpad = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))).astype(np.float64)
    w64 = (
        np.asarray(layer["weight"], dtype=np.float32)
        .reshape(c, k, k)
        .astype(np.float64)
    )
    b64 = np.asarray(layer["bias"], dtype=np.float32).astype(np.float64)
    acc = np.zeros((n, c, h_out, w_out), dtype=np.float64)
    h_stop = (h_out - 1) * s + 1
    w_stop = (w_out - 1) * s + 1
    for kh in range(k):
        for kw in range(k):
            window = xpad[:, :, kh : kh + h_stop : s, kw : kw + w_stop : s]
            acc += w64[:, kh, kw][None, :, None, None] * window
    acc += b64[None, :, None, None]
    return acc.astype(np.float32)


def apply_layer(layer: dict, x: np.ndarray, skip: np.ndarray | None = None) -> np.ndarray:
    """One layer over a (N, ...) float32 batch."""
    kind = layer["kind"]
    if kind == "Conv2d":
        return _apply_conv(layer, x)
    if kind == "DepthwiseConv2d":
        return _apply_depthwise(layer, x)
    if kind == "Affine":
        scale = np.asarray(layer["weight"], dtype=np.float32).astype(np.float64)
        shift = np.asarray(layer["bias"], dtype=np.float32).astype(np.float64)
        y = scale[None, :, None, None] * x.astype(np.float64)
        y += shift[None, :, None, None]
        return y.astype(np.float32)
    if kind == "Relu6":
        return np.minimum(np.maximum(x, np.float32(0.0)), np.float32(6.0))
    if kind == "GlobalAvgPool":
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w).astype(np.float64)
        acc = np.zeros((n, c), dtype=np.float64)
        for pos in range(h * w):
            acc += flat[:, :, pos]
        return (acc / float(h * w)).astype(np.float32).reshape(n, c, 1, 1)
    if kind == "Dense":
        n = x.shape[0]
        v = x.reshape(n, -1).astype(np.float64)
        w64 = (
            np.asarray(layer["weight"], dtype=np.float32)
            .reshape(layer["fout"], layer["fin"])
            .astype(np.float64)
        )
        b64 = np.asarray(layer["bias"], dtype=np.float32).astype(np.float64)
        acc = np.zeros((n, layer["fout"]), dtype=np.float64)
        for i in range(layer["fin"]):
            acc += w64[None, :, i] * v[:, i : i + 1]
        acc += b64[None, :]
        return acc.astype(np.float32)
    if kind == "ResidualAdd":
        return x + skip
    raise ValueError(f"unknown layer kind {kind}")


def forward_all(model: dict, batch: np.ndarray) -> list[np.ndarray]:
    """All intermediate tensors: result[k] is the batch at cut k.

    Dense output is returned as (N, fout); everything else is (N, C, H, W).
    """
    x = np.ascontiguousarray(batch, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    tensors = [x]
    for layer in model["layers"]:
        if layer["kind"] == "ResidualAdd":
            skip = tensors[layer["source"] + 1]
            x = apply_layer(layer, x, skip)
        else:
            x = apply_layer(layer, x)
        tensors.append(x)
    return tensors


def predict(model: dict, batch: np.ndarray) -> np.ndarray:
    logits = forward_all(model, batch)[-1]
    return np.argmax(logits, axis=1)


def count_layer_flops(layer: dict, input_shape: tuple[int, ...]) -> int:
    """Instrumented count: walk the output elements and tally the work
    each one performs (2 per multiply-add, 1 per add or clamp)."""
    kind = layer["kind"]
    out_shape = layer_output_shape(layer, input_shape)
    flops = 0
    if kind == "Conv2d":
        per_output = 2 * layer["k"] * layer["k"] * layer["cin"] + 1  # taps + bias
        for _ in range(int(np.prod(out_shape))):
            flops += per_output
    elif kind == "DepthwiseConv2d":
        per_output = 2 * layer["k"] * layer["k"] + 1
        for _ in range(int(np.prod(out_shape))):
            flops += per_output
    elif kind == "Affine":
        for _ in range(int(np.prod(input_shape))):
            flops += 2
    elif kind in ("Relu6", "ResidualAdd"):
        flops = int(np.prod(input_shape))
    elif kind == "GlobalAvgPool":
        flops = int(np.prod(input_shape))  # one add per pooled element
    elif kind == "Dense":
        for _ in range(layer["fout"]):
            flops += 2 * layer["fin"] + 1
    else:
        raise ValueError(f"unknown layer kind {kind}")
    return flops


def flops_table(model: dict) -> list[int]:
    chain = shape_chain(model)
    return [
        count_layer_flops(layer, chain[i]) for i, layer in enumerate(model["layers"])
    ]
