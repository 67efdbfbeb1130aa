"""Closed-form per-layer cost accounting: FLOPs and raw activation bytes.

Convention: one multiply-accumulate counts as 2 FLOPs; bias adds and
elementwise ops are counted. GlobalAvgPool is charged one FLOP per input
element (the adds; the per-channel divide is absorbed in the rounding of
this convention). Codec compute is excluded from the per-layer FLOPs
axis and reported separately by codec_flops.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .errors import ShapeMismatch
from .runtime import (
    Affine,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    GlobalAvgPool,
    Layer,
    ModelGraph,
    Relu6,
    ResidualAdd,
    layer_kind,
)

PROFILE_CSV_COLUMNS = ("layer_index", "kind", "flops", "cumulative_flops", "raw_bytes")


@dataclass(frozen=True)
class LayerProfile:
    layer_index: int
    kind: str
    flops: int
    output_elements: int

    @property
    def raw_bytes(self) -> int:
        return 4 * self.output_elements


def layer_cost(layer: Layer, input_shape: tuple[int, ...], layer_index: int = 0) -> LayerProfile:
    """FLOPs and output size for one layer at the given input shape."""
    output_shape = layer.output_shape(input_shape)
    out_elements = math.prod(output_shape)
    in_elements = math.prod(input_shape)
    if isinstance(layer, Conv2d):
        _, h_out, w_out = output_shape
        macs = h_out * w_out * layer.out_channels * layer.kernel**2 * layer.in_channels
        flops = 2 * macs + h_out * w_out * layer.out_channels
    elif isinstance(layer, DepthwiseConv2d):
        _, h_out, w_out = output_shape
        macs = h_out * w_out * layer.channels * layer.kernel**2
        flops = 2 * macs + h_out * w_out * layer.channels
    elif isinstance(layer, Dense):
        flops = 2 * layer.in_features * layer.out_features + layer.out_features
    elif isinstance(layer, Affine):
        flops = 2 * in_elements
    elif isinstance(layer, (Relu6, ResidualAdd)):
        flops = in_elements
    elif isinstance(layer, GlobalAvgPool):
        flops = in_elements
    else:
        raise ShapeMismatch(f"unknown layer type {type(layer).__name__}")
    return LayerProfile(layer_index, layer_kind(layer), flops, out_elements)


def profile_model(model: ModelGraph) -> list[LayerProfile]:
    return [
        layer_cost(layer, model.shape_chain[i], i)
        for i, layer in enumerate(model.layers)
    ]


def cumulative_flops(model: ModelGraph) -> list[int]:
    """cumulative_flops[k] = FLOPs of layers 0..k-1 (index k = cut point)."""
    totals = [0]
    for profile in profile_model(model):
        totals.append(totals[-1] + profile.flops)
    return totals


def raw_bytes_at_cut(model: ModelGraph, k: int) -> int:
    """Bytes to ship the uncompressed f32 activation at cut k (input for k=0)."""
    return 4 * math.prod(model.cut_shape(k))


def codec_flops(tensor_shape: tuple[int, int, int], d: int, m: int) -> int:
    """Encoder arithmetic per tensor: center, project, quantize each sample."""
    c, h, w = tensor_shape
    n_blocks = -(-c // d)
    per_sample = d + 2 * d * m + m
    return n_blocks * h * w * per_sample


def write_profile_csv(model: ModelGraph, stream) -> None:
    """One row per layer; cumulative_flops on row i covers layers 0..i,
    i.e. the local cost of cutting right after layer i; raw_bytes is the
    size of that layer's output."""
    writer = csv.writer(stream)
    writer.writerow(PROFILE_CSV_COLUMNS)
    running = 0
    for profile in profile_model(model):
        running += profile.flops
        writer.writerow(
            [
                profile.layer_index,
                profile.kind,
                profile.flops,
                running,
                profile.raw_bytes,
            ]
        )
