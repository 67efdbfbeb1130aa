"""Experiment driver: calibrate codecs, evaluate split points, sweep grids.

The calibration/test partition is a fixed 80/20 split keyed on a
deterministic hash of the image index, so every run (and every
implementation) sees the same partition without a random-number
contract: index i is calibration iff FNV-1a-64(little-endian u64 of i)
mod 5 is nonzero.

Wire accounting: a lossy point's payload is the bitstream header plus
the packed payload rounded up to whole bytes, averaged over the test
set. Raw points ship the bare f32 tensor. At k = layer_count the raw
"payload" is the logits vector (class_count * 4 bytes); pass
count_logits_bytes=False to report it as zero instead.
"""

from __future__ import annotations

import datetime
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .codec import ActivationCodec, BITSTREAM_HEADER_BYTES, CodecParams, fit_block_pca
from .errors import (
    BadMagic,
    EmptyCalibration,
    EmptyReport,
    InvalidCut,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from .planner import TradeoffPoint, pareto_frontier, point_to_record
from .profiler import cumulative_flops, raw_bytes_at_cut
from .runtime import ModelGraph, forward_collect, forward_prefix, forward_suffix

DATASET_MAGIC = b"SPLITDAT"
DATASET_VERSION = 1


@dataclass
class Dataset:
    """Labeled images in the model's input shape; (N, C, H, W) float32."""

    images: np.ndarray
    labels: np.ndarray
    checksum: int | None = None  # trailing FNV of the file this was read from

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeMismatch(f"images must be (N,C,H,W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeMismatch(
                f"{self.labels.shape[0]} labels for {self.images.shape[0]} images"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.images[mask], self.labels[mask], self.checksum)

    def split(self) -> tuple["Dataset", "Dataset"]:
        """(calibration, test) under the fixed hash rule."""
        mask = calibration_mask(len(self))
        return self.subset(mask), self.subset(~mask)

    def save(self, path) -> None:
        w = binio.Writer()
        w.raw(DATASET_MAGIC)
        w.u32(DATASET_VERSION)
        w.u32(len(self))
        for dim in self.images.shape[1:]:
            w.u32(dim)
        for label, image in zip(self.labels, self.images):
            w.u32(int(label))
            w.f32_array(image.ravel())
        with open(path, "wb") as f:
            f.write(w.finish_with_checksum())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as f:
            data = f.read()
        body = binio.check_trailing_fnv(data)
        r = binio.Reader(body)
        if r.raw(8) != DATASET_MAGIC:
            raise BadMagic(f"not a dataset file: {path}")
        version = r.u32()
        if version != DATASET_VERSION:
            raise VersionUnsupported(f"dataset version {version}")
        count = r.u32()
        shape = (r.u32(), r.u32(), r.u32())
        images = np.empty((count, *shape), dtype=np.float32)
        labels = np.empty(count, dtype=np.int64)
        for i in range(count):
            labels[i] = r.u32()
            images[i] = r.f32_array(int(np.prod(shape))).reshape(shape)
        if r.remaining():
            raise TruncatedFile(f"{r.remaining()} unexpected bytes after images")
        return cls(images, labels, checksum=struct.unpack("<Q", data[-8:])[0])


def calibration_mask(n: int) -> np.ndarray:
    """True = calibration (about 80%), False = test."""
    return np.array(
        [binio.fnv1a64(struct.pack("<Q", i)) % 5 != 0 for i in range(n)],
        dtype=bool,
    )


def calibrate(
    model: ModelGraph, images: np.ndarray, k: int, params: CodecParams
) -> ActivationCodec:
    """Fit a codec on the activations of ``images`` at cut ``k``."""
    model.validate_split(k)
    if k == 0 or k == model.layer_count:
        raise InvalidCut(
            f"k={k} has no codec: input compression is an external baseline "
            "and the final cut ships logits"
        )
    if len(images) < 2:
        raise EmptyCalibration(f"need at least 2 calibration images, got {len(images)}")
    acts = np.stack([forward_prefix(model, img, k) for img in images])
    return params.make().fit(acts)


def evaluate_split(
    model: ModelGraph,
    images: np.ndarray,
    labels: np.ndarray,
    k: int,
    codec: ActivationCodec | None = None,
    *,
    count_logits_bytes: bool = True,
    prefix_activations: np.ndarray | None = None,
) -> TradeoffPoint:
    """Accuracy and mean wire bytes for one (cut, codec) configuration.

    prefix_activations, if given, must be forward_prefix outputs at k for
    exactly these images (lets sweeps reuse one forward pass per image).
    """
    model.validate_split(k)
    if len(images) == 0:
        raise EmptyCalibration("no evaluation images")
    params = None
    if codec is not None:
        params = CodecParams(
            d=codec.block_size,
            m=codec.retained_components,
            b=codec.quant_bits,
            clip=float(codec.clip_sigmas),
        )
        if tuple(codec.tensor_shape_) != model.cut_shape(k):
            raise ShapeMismatch(
                f"codec fitted for {codec.tensor_shape_}, cut {k} "
                f"produces {model.cut_shape(k)}"
            )
    correct = 0
    total_bytes = 0.0
    for i in range(len(images)):
        if prefix_activations is not None:
            x_k = prefix_activations[i]
        else:
            x_k = forward_prefix(model, images[i], k)
        if codec is not None:
            bs = codec.encode(x_k, split_index=k)
            total_bytes += bs.byte_size
            x_k = codec.decode(bs)
        elif k == model.layer_count and not count_logits_bytes:
            total_bytes += 0.0
        else:
            total_bytes += raw_bytes_at_cut(model, k)
        logits = forward_suffix(model, x_k, k)
        if int(np.argmax(logits)) == int(labels[i]):
            correct += 1
    return TradeoffPoint(
        k=k,
        codec_config=params,
        local_flops=cumulative_flops(model)[k],
        mean_payload_bytes=total_bytes / len(images),
        top1_accuracy=correct / len(images),
    )


@dataclass
class SweepReport:
    points: list[TradeoffPoint]
    baseline: dict | None = None  # {"bytes": ..., "accuracy": ...}
    provenance: dict = field(default_factory=dict)

    def frontier(self) -> list[TradeoffPoint]:
        return pareto_frontier(self.points)


def sweep(
    model: ModelGraph,
    dataset: Dataset,
    k_list,
    grid,
    baseline: dict | None = None,
    *,
    count_logits_bytes: bool = True,
) -> SweepReport:
    """Calibrate + evaluate every (k, config) cell plus a raw point per k.

    Points are ordered k-major (raw first, then grid order). Per-block PCA
    is fitted once per (k, block size) and shared across (m, b) cells,
    which is byte-identical to fitting each cell from scratch.
    """
    k_list = [model.validate_split(k) for k in k_list]
    grid = list(grid)
    if not k_list or not grid:
        raise EmptyReport("sweep needs at least one cut and one codec config")
    cal, test = dataset.split()
    if len(cal) < 2 or len(test) == 0:
        raise EmptyCalibration(
            f"dataset too small to split: {len(cal)} calibration, {len(test)} test"
        )
    cal_acts = _collect_activations(model, cal.images, k_list)
    test_acts = _collect_activations(model, test.images, k_list)

    points: list[TradeoffPoint] = []
    for k in k_list:
        points.append(
            evaluate_split(
                model,
                test.images,
                test.labels,
                k,
                None,
                count_logits_bytes=count_logits_bytes,
                prefix_activations=test_acts[k],
            )
        )
        if k == 0 or k == model.layer_count:
            continue  # no codec cell at the endpoints
        pca_cache: dict[int, tuple] = {}
        for params in grid:
            if params.d not in pca_cache:
                pca_cache[params.d] = fit_block_pca(cal_acts[k], params.d)
            means, bases, eigs = pca_cache[params.d]
            codec = ActivationCodec.from_block_pca(
                params, model.cut_shape(k), means, bases, eigs, cal_acts[k]
            )
            points.append(
                evaluate_split(
                    model,
                    test.images,
                    test.labels,
                    k,
                    codec,
                    count_logits_bytes=count_logits_bytes,
                    prefix_activations=test_acts[k],
                )
            )
    provenance = {
        "model": model.metadata.name,
        "dataset_checksum": None
        if dataset.checksum is None
        else f"{dataset.checksum:#018x}",
        "k_list": list(k_list),
        "grid": [point_to_record_config(p) for p in grid],
        "calibration_images": len(cal),
        "test_images": len(test),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    return SweepReport(points=points, baseline=baseline, provenance=provenance)


def point_to_record_config(params: CodecParams) -> dict:
    return {"d": params.d, "m": params.m, "b": params.b, "clip": params.clip}


def _collect_activations(model, images, k_list) -> dict[int, np.ndarray]:
    out: dict[int, list] = {k: [] for k in k_list}
    for img in images:
        captured = forward_collect(model, img, k_list)
        for k in k_list:
            out[k].append(captured[k])
    return {k: np.stack(acts) for k, acts in out.items()}


def emit_report(report: SweepReport, fmt: str, stream) -> None:
    """Write a sweep report as 'csv' or 'json' (schema-stable)."""
    from .planner import write_points_csv  # local import avoids cycle at startup

    if not report.points:
        raise EmptyReport("report has no points")
    if fmt == "csv":
        if report.baseline:
            stream.write(
                f"# baseline_bytes={report.baseline['bytes']} "
                f"baseline_accuracy={report.baseline['accuracy']}\n"
            )
        write_points_csv(report.points, stream, frontier=report.frontier())
        return
    if fmt == "json":
        marked = set(id(p) for p in report.frontier())
        payload = {
            "provenance": report.provenance,
            "baseline": report.baseline,
            "points": [point_to_record(p, id(p) in marked) for p in report.points],
        }
        json.dump(payload, stream, indent=2)
        stream.write("\n")
        return
    raise ValueError(f"unknown report format {fmt!r}")


def load_report_json(stream) -> SweepReport:
    data = json.load(stream)
    from .planner import point_from_record

    return SweepReport(
        points=[point_from_record(rec) for rec in data["points"]],
        baseline=data.get("baseline"),
        provenance=data.get("provenance", {}),
    )


def load_grid(path) -> tuple[list[int] | None, list[CodecParams], dict | None]:
    """Read a sweep grid file: {"k_list": [...], "configs": [{d,m,b,clip}...],
    "baseline": {"bytes": ..., "accuracy": ...}}; k_list and baseline optional."""
    with open(path) as f:
        data = json.load(f)
    configs = [
        CodecParams(
            d=int(c["d"]),
            m=int(c["m"]),
            b=int(c["b"]),
            clip=float(c.get("clip", 4.0)),
        )
        for c in data["configs"]
    ]
    k_list = data.get("k_list")
    if k_list is not None:
        k_list = [int(k) for k in k_list]
    return k_list, configs, data.get("baseline")


def split_pipeline_logits(
    model: ModelGraph, codec: ActivationCodec, k: int, image: np.ndarray
):
    """In-process reference pipeline; returns (logits, bitstream)."""
    x_k = forward_prefix(model, image, k)
    bs = codec.encode(x_k, split_index=k)
    logits = forward_suffix(model, codec.decode(bs), k)
    return logits, bs
