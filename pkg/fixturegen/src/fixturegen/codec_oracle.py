"""Independent activation codec used to cross-validate the committed bytes.

Follows the codec file format's determinism contract: float32 stored
parameters, float64 arithmetic derived from them, two-level sequential
mean/covariance accumulation (positions within an image, then images in
dataset order), population divisor, eigenvalues clamped at zero before
float32 storage, step sizes computed from the stored float32
eigenvalues, mid-tread round-half-away-from-zero quantization, and one
canonical Huffman table in (length, symbol) order packed MSB-first.

The eigendecomposition here is LAPACK's (np.linalg.eigh) with the format's
orientation rule applied (first largest-magnitude entry positive), sorted
by descending eigenvalue; byte agreement with a from-scratch solver on
the other side is part of what the fixture self-check establishes.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass

import numpy as np

from .blobs import FNV_OFFSET, fnv1a64

CODEC_MAGIC = b"SPLITCDC"
BITSTREAM_MAGIC = b"SPLITBIT"
ZERO_VARIANCE = 1e-12


def split_blocks(x: np.ndarray, d: int) -> np.ndarray:
    """(C,H,W) -> (n_blocks, H*W, d), channels zero-padded to a multiple of d."""
    c, h, w = x.shape
    n_blocks = -(-c // d)
    flat = np.zeros((h * w, n_blocks * d), dtype=np.float32)
    flat[:, :c] = np.asarray(x, dtype=np.float32).reshape(c, h * w).T
    return flat.reshape(h * w, n_blocks, d).transpose(1, 0, 2)


def _mean_cov(block_samples: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Population mean/covariance, accumulated position by position."""
    d = block_samples[0].shape[1]
    total = np.zeros(d, dtype=np.float64)
    count = 0
    for samples in block_samples:
        part = np.zeros(d, dtype=np.float64)
        for row in samples.astype(np.float64):
            part += row
        total += part
        count += samples.shape[0]
    mean = total / count
    gram = np.zeros((d, d), dtype=np.float64)
    for samples in block_samples:
        dev = samples.astype(np.float64) - mean
        part = np.zeros((d, d), dtype=np.float64)
        for row in dev:
            part += row[:, None] * row[None, :]
        gram += part
    return mean, gram / count


def _oriented_eig(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        lead = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vals, vecs


def _huffman_lengths(counts: np.ndarray) -> np.ndarray:
    """Code lengths with the format's tie rule: equal weights prefer the
    lower symbol, and internal nodes rank after symbols by creation."""
    n = counts.size
    heap = [(int(counts[s]), s, s) for s in range(n)]
    heapq.heapify(heap)
    children: dict[int, tuple[int, int]] = {}
    next_id = n
    while len(heap) > 1:
        w1, _, a = heapq.heappop(heap)
        w2, _, b = heapq.heappop(heap)
        children[next_id] = (a, b)
        heapq.heappush(heap, (w1 + w2, next_id, next_id))
        next_id += 1
    lengths = np.zeros(n, dtype=np.uint8)
    stack = [(heap[0][2], 0)]
    while stack:
        node, depth = stack.pop()
        if node < n:
            lengths[node] = depth
        else:
            a, b = children[node]
            stack.append((a, depth + 1))
            stack.append((b, depth + 1))
    return lengths


def _canonical_codes(lengths: np.ndarray) -> np.ndarray:
    order = sorted(range(lengths.size), key=lambda s: (int(lengths[s]), s))
    codes = np.zeros(lengths.size, dtype=np.uint64)
    code = 0
    prev = int(lengths[order[0]])
    for sym in order:
        ln = int(lengths[sym])
        code <<= ln - prev
        codes[sym] = code
        code += 1
        prev = ln
    return codes


class _BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.n = 0

    def put(self, code: int, length: int) -> None:
        self.acc = (self.acc << length) | code
        self.n += length
        while self.n >= 8:
            self.n -= 8
            self.buf.append((self.acc >> self.n) & 0xFF)
        self.acc &= (1 << self.n) - 1

    def getvalue(self) -> tuple[bytes, int]:
        total_bits = len(self.buf) * 8 + self.n
        if self.n:
            return bytes(self.buf) + bytes([(self.acc << (8 - self.n)) & 0xFF]), total_bits
        return bytes(self.buf), total_bits


@dataclass
class OracleCodec:
    d: int
    m: int
    b: int
    clip: float
    tensor_shape: tuple[int, int, int]
    means: np.ndarray  # (B, d) f32
    bases: np.ndarray  # (B, d, m) f32
    eigenvalues: np.ndarray  # (B, m) f32
    steps: np.ndarray  # (B, m) f32
    lengths: np.ndarray  # (2^b,) u8
    codes: np.ndarray  # (2^b,) u64
    codec_id: int

    def serialize(self) -> bytes:
        body = self._body()
        return body + struct.pack("<Q", fnv1a64(body))

    def _body(self) -> bytes:
        out = bytearray()
        out += CODEC_MAGIC
        out += struct.pack("<IIII", 1, self.d, self.m, self.b)
        out += struct.pack("<f", self.clip)
        out += struct.pack("<III", *self.tensor_shape)
        for blk in range(self.means.shape[0]):
            out += struct.pack("<I", self.d)
            out += self.means[blk].astype("<f4").tobytes()
            out += struct.pack("<I", self.d * self.m)
            out += self.bases[blk].astype("<f4").ravel().tobytes()
            out += struct.pack("<I", self.m)
            out += self.eigenvalues[blk].astype("<f4").tobytes()
        out += self.steps.astype("<f4").ravel().tobytes()
        out += self.lengths.astype(np.uint8).tobytes()
        return bytes(out)

    def indices(self, x: np.ndarray) -> np.ndarray:
        """Quantizer indices, (n_blocks, H*W, m)."""
        blocks = split_blocks(x, self.d)
        half = 1 << (self.b - 1)
        out = np.zeros((blocks.shape[0], blocks.shape[1], self.m), dtype=np.int64)
        for blk in range(blocks.shape[0]):
            dev = blocks[blk].astype(np.float64) - self.means[blk].astype(np.float64)
            basis64 = self.bases[blk].astype(np.float64)
            coeffs = np.zeros((dev.shape[0], self.m), dtype=np.float64)
            for i in range(self.d):
                coeffs += dev[:, i : i + 1] * basis64[i]
            steps64 = self.steps[blk].astype(np.float64)
            raw = np.sign(coeffs) * np.floor(np.abs(coeffs) / steps64 + 0.5)
            out[blk] = np.clip(raw, -half, half - 1).astype(np.int64)
        return out

    def encode(self, x: np.ndarray, split_index: int) -> bytes:
        half = 1 << (self.b - 1)
        symbols = self.indices(x).ravel() + half
        writer = _BitWriter()
        for sym in symbols:
            writer.put(int(self.codes[sym]), int(self.lengths[sym]))
        payload, bit_count = writer.getvalue()
        c, h, w = self.tensor_shape
        header = BITSTREAM_MAGIC + struct.pack(
            "<IIIIIQQ", 1, split_index, c, h, w, self.codec_id, bit_count
        )
        return header + payload


def fit_oracle_codec(
    calibration: np.ndarray, d: int, m: int, b: int, clip: float = 4.0
) -> OracleCodec:
    """Fit on (N, C, H, W) calibration activations in dataset order."""
    tensor_shape = tuple(int(s) for s in calibration.shape[1:])
    per_image = [split_blocks(img, d) for img in calibration]
    n_blocks = per_image[0].shape[0]

    means = np.zeros((n_blocks, d), dtype=np.float32)
    bases = np.zeros((n_blocks, d, m), dtype=np.float32)
    eigs = np.zeros((n_blocks, m), dtype=np.float32)
    for blk in range(n_blocks):
        mean64, cov64 = _mean_cov([blocks[blk] for blocks in per_image])
        vals, vecs = _oriented_eig(cov64)
        means[blk] = mean64.astype(np.float32)
        bases[blk] = vecs.astype(np.float32)[:, :m]
        eigs[blk] = np.maximum(vals, 0.0).astype(np.float32)[:m]

    clip64 = float(np.float32(clip))
    steps = np.ones((n_blocks, m), dtype=np.float32)
    for blk in range(n_blocks):
        for j in range(m):
            lam = float(eigs[blk, j])
            if lam > ZERO_VARIANCE:
                steps[blk, j] = np.float32(
                    2.0 * clip64 * math.sqrt(lam) / float(1 << b)
                )

    codec = OracleCodec(
        d=d,
        m=m,
        b=b,
        clip=clip,
        tensor_shape=tensor_shape,
        means=means,
        bases=bases,
        eigenvalues=eigs,
        steps=steps,
        lengths=np.zeros(1 << b, dtype=np.uint8),
        codes=np.zeros(1 << b, dtype=np.uint64),
        codec_id=0,
    )

    half = 1 << (b - 1)
    counts = np.ones(1 << b, dtype=np.int64)
    for img in calibration:
        symbols = codec.indices(img).ravel() + half
        counts += np.bincount(symbols, minlength=1 << b)
    codec.lengths = _huffman_lengths(counts)
    codec.codes = _canonical_codes(codec.lengths)
    codec.codec_id = fnv1a64(codec._body())
    return codec
