"""Independent writers/readers for the fixture binary formats.

Layouts (all little-endian, FNV-1a-64 of the body appended as u64):

SPLITMDL v1: magic, u32 version, u16 name length + name, f32 width
multiplier, u32 input size, u32 class count, 3x u32 input shape, u32
layer count, then per layer a u8 kind tag, kind-specific u32 fields,
and two u64-length-prefixed f32 blobs (weight, bias; zero-length for
parameterless layers).

SPLITDAT v1: magic, u32 version, u32 count, 3x u32 image shape, then
per item u32 label + raw f32 image.
"""

from __future__ import annotations

import struct

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

MODEL_MAGIC = b"SPLITMDL"
DATA_MAGIC = b"SPLITDAT"

# kind tag -> (name, u32 field names)
KIND_TAGS = {
    "Conv2d": 1,
    "DepthwiseConv2d": 2,
    "Affine": 3,
    "Relu6": 4,
    "GlobalAvgPool": 5,
    "Dense": 6,
    "ResidualAdd": 7,
}

KIND_FIELDS = {
    "Conv2d": ("cin", "cout", "k", "s", "p"),
    "DepthwiseConv2d": ("c", "k", "s", "p"),
    "Affine": ("c",),
    "Relu6": (),
    "GlobalAvgPool": (),
    "Dense": ("fin", "fout"),
    "ResidualAdd": ("source",),
}


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    h = state
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def finish_with_checksum(body: bytes) -> bytes:
    return body + struct.pack("<Q", fnv1a64(body))


def split_checksum(data: bytes) -> tuple[bytes, int]:
    """Validate and strip the trailing checksum; returns (body, checksum)."""
    if len(data) < 8:
        raise ValueError("file shorter than its checksum")
    body, tail = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if fnv1a64(body) != tail:
        raise ValueError("checksum mismatch")
    return body, tail


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_model(
    layers: list[dict],
    input_shape: tuple[int, int, int],
    class_count: int,
    name: str,
    width_multiplier: float,
    input_size: int,
) -> bytes:
    """Serialize a layer-dict list; each dict has 'kind', its u32 fields,
    and optional 'weight'/'bias' float arrays."""
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<I", 1)
    encoded = name.encode("utf-8")
    out += struct.pack("<H", len(encoded)) + encoded
    out += struct.pack("<f", width_multiplier)
    out += struct.pack("<I", input_size)
    out += struct.pack("<I", class_count)
    out += struct.pack("<III", *input_shape)
    out += struct.pack("<I", len(layers))
    for layer in layers:
        kind = layer["kind"]
        out += struct.pack("<B", KIND_TAGS[kind])
        for field in KIND_FIELDS[kind]:
            out += struct.pack("<I", layer[field])
        weight = np.asarray(layer.get("weight", np.zeros(0)), dtype=np.float32)
        bias = np.asarray(layer.get("bias", np.zeros(0)), dtype=np.float32)
        out += struct.pack("<Q", weight.size) + _f32_bytes(weight.ravel())
        out += struct.pack("<Q", bias.size) + _f32_bytes(bias.ravel())
    return finish_with_checksum(bytes(out))


def read_model(data: bytes) -> dict:
    """Parse a SPLITMDL blob back into layer dicts (used for self-checks)."""
    body, _ = split_checksum(data)
    if body[:8] != MODEL_MAGIC:
        raise ValueError("bad model magic")
    off = 8
    (version,) = struct.unpack_from("<I", body, off); off += 4
    if version != 1:
        raise ValueError(f"model version {version}")
    (name_len,) = struct.unpack_from("<H", body, off); off += 2
    name = body[off : off + name_len].decode("utf-8"); off += name_len
    (width,) = struct.unpack_from("<f", body, off); off += 4
    (input_size,) = struct.unpack_from("<I", body, off); off += 4
    (class_count,) = struct.unpack_from("<I", body, off); off += 4
    input_shape = struct.unpack_from("<III", body, off); off += 12
    (layer_count,) = struct.unpack_from("<I", body, off); off += 4
    tag_names = {v: k for k, v in KIND_TAGS.items()}
    layers = []
    for _ in range(layer_count):
        (tag,) = struct.unpack_from("<B", body, off); off += 1
        kind = tag_names[tag]
        layer = {"kind": kind}
        for field in KIND_FIELDS[kind]:
            (layer[field],) = struct.unpack_from("<I", body, off); off += 4
        for slot in ("weight", "bias"):
            (n,) = struct.unpack_from("<Q", body, off); off += 8
            layer[slot] = np.frombuffer(body, dtype="<f4", count=n, offset=off).copy()
            off += 4 * n
        layers.append(layer)
    if off != len(body):
        raise ValueError(f"{len(body) - off} unparsed bytes")
    return {
        "layers": layers,
        "input_shape": tuple(input_shape),
        "class_count": class_count,
        "name": name,
        "width_multiplier": width,
        "input_size": input_size,
    }


def write_dataset(images: np.ndarray, labels: np.ndarray) -> bytes:
    images = np.ascontiguousarray(images, dtype=np.float32)
    out = bytearray()
    out += DATA_MAGIC
    out += struct.pack("<I", 1)
    out += struct.pack("<I", images.shape[0])
    out += struct.pack("<III", *images.shape[1:])
    for label, image in zip(labels, images):
        out += struct.pack("<I", int(label))
        out += _f32_bytes(image.ravel())
    return finish_with_checksum(bytes(out))


def read_dataset(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    body, _ = split_checksum(data)
    if body[:8] != DATA_MAGIC:
        raise ValueError("bad dataset magic")
    off = 8
    version, count = struct.unpack_from("<II", body, off); off += 8
    if version != 1:
        raise ValueError(f"dataset version {version}")
    shape = struct.unpack_from("<III", body, off); off += 12
    n_values = int(np.prod(shape))
    images = np.empty((count, *shape), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        (labels[i],) = struct.unpack_from("<I", body, off); off += 4
        images[i] = (
            np.frombuffer(body, dtype="<f4", count=n_values, offset=off)
            .reshape(shape)
        )
        off += 4 * n_values
    if off != len(body):
        raise ValueError(f"{len(body) - off} unparsed bytes")
    return images, labels


def calibration_mask(n: int) -> np.ndarray:
    """The evaluation harness's 80/20 hash split, reimplemented."""
    return np.array(
        [fnv1a64(struct.pack("<Q", i)) % 5 != 0 for i in range(n)], dtype=bool
    )


def _upsample_axis(size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(2 * size, dtype=np.float64) + 0.5) / 2.0 - 0.5
    src = np.clip(src, 0.0, size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, src - lo


def bilinear_upsample_2x(img: np.ndarray) -> np.ndarray:
    """2x bilinear upsample with half-pixel centers, float64 math."""
    h, w = img.shape
    rlo, rhi, rfrac = _upsample_axis(h)
    clo, chi, cfrac = _upsample_axis(w)
    x = img.astype(np.float64)
    rows = x[rlo] * (1.0 - rfrac)[:, None] + x[rhi] * rfrac[:, None]
    return rows[:, clo] * (1.0 - cfrac)[None, :] + rows[:, chi] * cfrac[None, :]
