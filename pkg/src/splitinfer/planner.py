"""Pareto analysis over (local FLOPs, payload bytes, accuracy) and split selection."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass

from .codec import CodecParams
from .errors import EmptyInput, Infeasible


@dataclass(frozen=True)
class TradeoffPoint:
    """One evaluated (cut, codec) configuration; codec_config None = raw f32."""

    k: int
    codec_config: CodecParams | None
    local_flops: int
    mean_payload_bytes: float
    top1_accuracy: float


class Objective(enum.Enum):
    MAX_ACCURACY = "max-accuracy"
    MIN_BYTES = "min-bytes"
    MIN_FLOPS = "min-flops"


@dataclass(frozen=True)
class Constraints:
    max_bytes: float | None = None
    max_local_flops: int | None = None
    min_accuracy: float | None = None

    def any_present(self) -> bool:
        return (
            self.max_bytes is not None
            or self.max_local_flops is not None
            or self.min_accuracy is not None
        )

    def satisfied_by(self, p: TradeoffPoint) -> bool:
        if self.max_bytes is not None and p.mean_payload_bytes > self.max_bytes:
            return False
        if self.max_local_flops is not None and p.local_flops > self.max_local_flops:
            return False
        if self.min_accuracy is not None and p.top1_accuracy < self.min_accuracy:
            return False
        return True

    def violation(self, p: TradeoffPoint) -> float:
        """Sum of relative constraint overshoots; 0 means feasible."""
        total = 0.0
        if self.max_bytes is not None and p.mean_payload_bytes > self.max_bytes:
            scale = max(abs(self.max_bytes), 1.0)
            total += (p.mean_payload_bytes - self.max_bytes) / scale
        if self.max_local_flops is not None and p.local_flops > self.max_local_flops:
            scale = max(abs(self.max_local_flops), 1.0)
            total += (p.local_flops - self.max_local_flops) / scale
        if self.min_accuracy is not None and p.top1_accuracy < self.min_accuracy:
            total += self.min_accuracy - p.top1_accuracy
        return total


def dominates(p: TradeoffPoint, q: TradeoffPoint) -> bool:
    """p is at least as good on all three axes and strictly better on one."""
    if (
        p.local_flops > q.local_flops
        or p.mean_payload_bytes > q.mean_payload_bytes
        or p.top1_accuracy < q.top1_accuracy
    ):
        return False
    return (
        p.local_flops < q.local_flops
        or p.mean_payload_bytes < q.mean_payload_bytes
        or p.top1_accuracy > q.top1_accuracy
    )


def pareto_frontier(points) -> list[TradeoffPoint]:
    """All points not dominated by another, sorted by (bytes, flops)."""
    points = list(points)
    if not points:
        raise EmptyInput("no trade-off points")
    kept = [
        p
        for i, p in enumerate(points)
        if not any(dominates(q, p) for j, q in enumerate(points) if j != i)
    ]
    return sorted(kept, key=lambda p: (p.mean_payload_bytes, p.local_flops))


_SORT_KEYS = {
    Objective.MAX_ACCURACY: lambda p: (
        -p.top1_accuracy,
        p.mean_payload_bytes,
        p.local_flops,
    ),
    Objective.MIN_BYTES: lambda p: (
        p.mean_payload_bytes,
        -p.top1_accuracy,
        p.local_flops,
    ),
    Objective.MIN_FLOPS: lambda p: (
        p.local_flops,
        -p.top1_accuracy,
        p.mean_payload_bytes,
    ),
}


def select_split(
    points, constraints: Constraints, objective: Objective
) -> TradeoffPoint:
    """Best feasible point; ties always fall back to accuracy, bytes, flops."""
    points = list(points)
    if not points:
        raise EmptyInput("no trade-off points")
    if not constraints.any_present():
        raise ValueError("select_split needs at least one constraint (use infinity)")
    feasible = [p for p in points if constraints.satisfied_by(p)]
    if not feasible:
        nearest = min(points, key=constraints.violation)
        raise Infeasible(
            "no point satisfies the constraints; nearest is "
            f"k={nearest.k} bytes={nearest.mean_payload_bytes:.1f} "
            f"flops={nearest.local_flops} acc={nearest.top1_accuracy:.4f}",
            nearest=nearest,
        )
    return min(feasible, key=_SORT_KEYS[objective])


def scalarized_best(
    points, w_flops: float, w_bytes: float, w_accuracy: float
) -> TradeoffPoint:
    """Single-number ranking: w_f*flops + w_B*bytes - w_a*accuracy, minimized."""
    points = list(points)
    if not points:
        raise EmptyInput("no trade-off points")
    return min(
        points,
        key=lambda p: (
            w_flops * p.local_flops
            + w_bytes * p.mean_payload_bytes
            - w_accuracy * p.top1_accuracy,
            -p.top1_accuracy,
            p.mean_payload_bytes,
            p.local_flops,
        ),
    )


# -- point-set serialization (CSV and JSON share one flat schema) ----------

POINT_FIELDS = (
    "k",
    "d",
    "m",
    "b",
    "clip",
    "local_flops",
    "mean_payload_bytes",
    "top1_accuracy",
    "on_frontier",
)


def point_to_record(p: TradeoffPoint, on_frontier: bool) -> dict:
    cfg = p.codec_config
    return {
        "k": p.k,
        "d": cfg.d if cfg else None,
        "m": cfg.m if cfg else None,
        "b": cfg.b if cfg else None,
        "clip": cfg.clip if cfg else None,
        "local_flops": p.local_flops,
        "mean_payload_bytes": p.mean_payload_bytes,
        "top1_accuracy": p.top1_accuracy,
        "on_frontier": on_frontier,
    }


def point_from_record(rec: dict) -> TradeoffPoint:
    raw = rec.get("d") in (None, "")
    cfg = None
    if not raw:
        cfg = CodecParams(
            d=int(rec["d"]),
            m=int(rec["m"]),
            b=int(rec["b"]),
            clip=float(rec["clip"]),
        )
    return TradeoffPoint(
        k=int(rec["k"]),
        codec_config=cfg,
        local_flops=int(rec["local_flops"]),
        mean_payload_bytes=float(rec["mean_payload_bytes"]),
        top1_accuracy=float(rec["top1_accuracy"]),
    )


def write_points_csv(points, stream, frontier=None) -> None:
    marked = set(id(p) for p in (frontier or pareto_frontier(points)))
    writer = csv.DictWriter(stream, fieldnames=POINT_FIELDS)
    writer.writeheader()
    for p in points:
        rec = point_to_record(p, id(p) in marked)
        writer.writerow({k: ("" if v is None else v) for k, v in rec.items()})


def read_points_csv(stream) -> list[TradeoffPoint]:
    return [
        point_from_record(row)
        for row in csv.DictReader(_data_lines(stream))
        if row.get("k") not in (None, "")
    ]


def _data_lines(stream):
    for line in stream:
        if not line.lstrip().startswith("#"):
            yield line


def write_points_json(points, stream, frontier=None) -> None:
    marked = set(id(p) for p in (frontier or pareto_frontier(points)))
    json.dump(
        [point_to_record(p, id(p) in marked) for p in points],
        stream,
        indent=2,
    )
    stream.write("\n")


def read_points_json(stream) -> list[TradeoffPoint]:
    data = json.load(stream)
    if isinstance(data, dict):  # full sweep report: points live under a key
        data = data["points"]
    return [point_from_record(rec) for rec in data]


def parse_constraints(
    max_bytes=None, max_local_flops=None, min_accuracy=None
) -> Constraints:
    """CLI adapter: treat infinities/NaN-free floats, default to unconstrained
    bytes when nothing was given so the invariant of one-present holds."""
    if max_bytes is None and max_local_flops is None and min_accuracy is None:
        max_bytes = math.inf
    return Constraints(
        max_bytes=None if max_bytes is None else float(max_bytes),
        max_local_flops=None if max_local_flops is None else int(max_local_flops),
        min_accuracy=None if min_accuracy is None else float(min_accuracy),
    )
