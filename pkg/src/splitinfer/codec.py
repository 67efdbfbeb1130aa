"""Lossy activation codec: blocked PCA, uniform quantization, Huffman coding.

The channel axis is split into contiguous blocks of ``block_size``
channels (the last block zero-padded). Each spatial position contributes
one sample vector per block. Per block a mean and an orthonormal PCA
basis are fitted on calibration activations; at encode time samples are
centered, projected onto the top ``retained_components`` directions,
quantized with a per-component uniform mid-tread step, and the indices
are entropy-coded with one canonical Huffman table shared by all blocks.

Encoded bitstreams must be byte-identical across independent
implementations, so everything feeding the output is pinned:

- fitted parameters are stored as float32 (their serialized precision);
  all encode/decode arithmetic runs in float64 derived from those
  float32 values;
- mean/covariance accumulation is two-level sequential: per image a
  running sum over row-major spatial positions, then image partials
  added in dataset order; the divisor is the total sample count;
- projection accumulates basis rows i = 0..d-1 in order; reconstruction
  accumulates components j = 0..m-1 in order and adds the mean last;
- negative eigenvalues from floating-point noise are clamped to zero
  before float32 storage;
- the step for component j is float32(2 * clip_sigmas * sqrt(lambda_j) /
  2^b) computed from the stored float32 eigenvalue, or exactly 1.0 when
  lambda_j <= 1e-12;
- quantization is round-half-away-from-zero of coeff/step, clamped to
  [-2^(b-1), 2^(b-1)-1]; symbols are index + 2^(b-1);
- the symbol stream is ordered (block, spatial position row-major,
  component) and packed MSB-first.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import binio
from .eigen import symmetric_eig
from .errors import (
    BadMagic,
    CorruptPayload,
    EmptyCalibration,
    EmptyInput,
    ModelMismatch,
    ShapeMismatch,
    TrailingGarbage,
    TruncatedFile,
    VersionUnsupported,
)
from .huffman import CanonicalCode, build_code_lengths
from .validation import (
    as_activation,
    as_activation_batch,
    require_finite,
    require_int_in,
    require_positive,
)

CODEC_MAGIC = b"SPLITCDC"
CODEC_VERSION = 1

BITSTREAM_MAGIC = b"SPLITBIT"
BITSTREAM_VERSION = 1
BITSTREAM_HEADER_BYTES = 44

ZERO_VARIANCE_EIGENVALUE = 1e-12


@dataclass(frozen=True)
class CodecParams:
    """One grid cell of codec settings; field names match the CSV schema."""

    d: int = 8
    m: int = 4
    b: int = 6
    clip: float = 4.0

    def make(self) -> "ActivationCodec":
        return ActivationCodec(
            block_size=self.d,
            retained_components=self.m,
            quant_bits=self.b,
            clip_sigmas=self.clip,
        )

    def label(self) -> str:
        return f"d{self.d}m{self.m}b{self.b}"


@dataclass(frozen=True)
class Bitstream:
    """One encoded activation plus the header needed to route and decode it."""

    split_index: int
    tensor_shape: tuple[int, int, int]
    model_id: int
    bit_count: int
    payload: bytes

    @property
    def byte_size(self) -> int:
        return BITSTREAM_HEADER_BYTES + len(self.payload)

    def to_bytes(self) -> bytes:
        c, h, w = self.tensor_shape
        header = BITSTREAM_MAGIC + struct.pack(
            "<IIIIIQQ",
            BITSTREAM_VERSION,
            self.split_index,
            c,
            h,
            w,
            self.model_id,
            self.bit_count,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < BITSTREAM_HEADER_BYTES:
            raise TruncatedFile(
                f"bitstream header needs {BITSTREAM_HEADER_BYTES} bytes, got {len(data)}"
            )
        if data[:8] != BITSTREAM_MAGIC:
            raise BadMagic(f"expected {BITSTREAM_MAGIC!r}, got {data[:8]!r}")
        version, split_k, c, h, w, model_id, bit_count = struct.unpack(
            "<IIIIIQQ", data[8:BITSTREAM_HEADER_BYTES]
        )
        if version != BITSTREAM_VERSION:
            raise VersionUnsupported(f"bitstream version {version}")
        payload = data[BITSTREAM_HEADER_BYTES:]
        expected = (bit_count + 7) // 8
        if len(payload) < expected:
            raise TruncatedFile(
                f"payload holds {len(payload)} bytes, header claims {expected}"
            )
        if len(payload) > expected:
            raise TrailingGarbage(f"{len(payload) - expected} bytes past the payload")
        _check_pad_bits(payload, bit_count)
        return cls(split_k, (c, h, w), model_id, bit_count, payload)


def _check_pad_bits(payload: bytes, bit_count: int) -> None:
    tail = bit_count % 8
    if tail and payload[-1] & ((1 << (8 - tail)) - 1):
        raise TrailingGarbage("nonzero padding bits")


def partition_blocks(x: np.ndarray, block_size: int) -> list[np.ndarray]:
    """Split channels into padded blocks; each block is (H*W, block_size).

    Sample order inside a block is row-major over spatial positions.
    """
    x = as_activation(x)
    c, h, w = x.shape
    n_blocks = -(-c // block_size)
    flat = x.reshape(c, h * w).T
    padded = np.zeros((h * w, n_blocks * block_size), dtype=np.float32)
    padded[:, :c] = flat
    return [
        padded[:, b * block_size : (b + 1) * block_size] for b in range(n_blocks)
    ]


def quantize(coeffs: np.ndarray, steps: np.ndarray, quant_bits: int) -> np.ndarray:
    """Round half away from zero, clamp to the signed index range."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    half = 1 << (quant_bits - 1)
    raw = np.sign(coeffs) * np.floor(np.abs(coeffs) / steps + 0.5)
    return np.clip(raw, -half, half - 1).astype(np.int32)


def dequantize(indices: np.ndarray, steps: np.ndarray) -> np.ndarray:
    return indices.astype(np.float64) * np.asarray(steps, dtype=np.float64)


def _sequential_sum(rows: np.ndarray) -> np.ndarray:
    """Sum over axis 0 in strict index order (np.sum may reorder)."""
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1:], dtype=np.float64)
    return np.cumsum(rows, axis=0)[-1]


class ActivationCodec(BaseEstimator, TransformerMixin):
    """Fit on calibration activations, then encode/decode single tensors.

    Parameters
    ----------
    block_size : channels per PCA block (d).
    retained_components : directions kept per block (m), 0 <= m <= d.
    quant_bits : bits per quantizer index (b), 2 <= b <= 16.
    clip_sigmas : quantizer range in standard deviations per component.
    """

    def __init__(
        self,
        block_size: int = 8,
        retained_components: int = 4,
        quant_bits: int = 6,
        clip_sigmas: float = 4.0,
    ):
        self.block_size = block_size
        self.retained_components = retained_components
        self.quant_bits = quant_bits
        self.clip_sigmas = clip_sigmas

    def _validate_params(self) -> tuple[int, int, int, float]:
        d = require_int_in(self.block_size, "block_size", 1, 4096)
        m = require_int_in(self.retained_components, "retained_components", 0, d)
        b = require_int_in(self.quant_bits, "quant_bits", 2, 16)
        clip = require_positive(self.clip_sigmas, "clip_sigmas")
        return d, m, b, clip

    def fit(self, X, y=None):
        """Fit per-block PCA, quantizer steps, and the Huffman table.

        X is a sequence of identically shaped (C, H, W) activations or a
        (N, C, H, W) array; at least two calibration tensors are required.
        """
        d, m, b, _ = self._validate_params()
        try:
            batch = as_activation_batch(X, name="calibration activations")
        except EmptyInput:
            raise EmptyCalibration("no calibration activations") from None
        if batch.shape[0] < 2:
            raise EmptyCalibration(
                f"need at least 2 calibration tensors, got {batch.shape[0]}"
            )
        require_finite(batch, name="calibration activations")
        self.tensor_shape_ = tuple(int(s) for s in batch.shape[1:])
        means, bases_full, eigs_full = fit_block_pca(batch, d)
        self._finish_fit(batch, means, bases_full, eigs_full)
        return self

    @classmethod
    def from_block_pca(
        cls,
        params: CodecParams,
        tensor_shape: tuple[int, int, int],
        means: np.ndarray,
        bases_full: np.ndarray,
        eigs_full: np.ndarray,
        batch: np.ndarray,
    ) -> "ActivationCodec":
        """Finish a fit from precomputed per-block PCA (see fit_block_pca).

        Byte-identical to fit() on the same batch: the retained basis and
        eigenvalues are slices of the full-rank float32 arrays.
        """
        codec = params.make()
        codec._validate_params()
        codec.tensor_shape_ = tuple(int(s) for s in tensor_shape)
        codec._finish_fit(batch, means, bases_full, eigs_full)
        return codec

    def _finish_fit(self, batch, means, bases_full, eigs_full) -> None:
        d, m, b, _ = self._validate_params()
        n_blocks = means.shape[0]
        self.n_blocks_ = n_blocks
        self.means_ = means
        self.bases_ = np.ascontiguousarray(bases_full[:, :, :m])
        self.eigenvalues_ = np.ascontiguousarray(eigs_full[:, :m])
        steps = np.zeros((n_blocks, m), dtype=np.float32)
        for blk in range(n_blocks):
            steps[blk] = _step_sizes(self.eigenvalues_[blk], b, self.clip_sigmas)
        self.step_sizes_ = steps

        half = 1 << (b - 1)
        counts = np.ones(1 << b, dtype=np.int64)  # add-one smoothing
        for img in batch:
            symbols = self._index_blocks(img).ravel() + half
            counts += np.bincount(symbols, minlength=1 << b)
        self.code_lengths_ = build_code_lengths(counts)
        self.code_ = CanonicalCode(self.code_lengths_)
        self.codec_id_ = binio.fnv1a64(self._serialize_body())

    # -- encode / decode -------------------------------------------------

    def _index_blocks(self, x: np.ndarray) -> np.ndarray:
        """Quantizer indices for one tensor, shape (n_blocks, H*W, m)."""
        d, m, b, _ = self._validate_params()
        blocks = partition_blocks(x, d)
        out = np.zeros((self.n_blocks_, blocks[0].shape[0], m), dtype=np.int32)
        for blk, samples in enumerate(blocks):
            coeffs = _project(samples, self.means_[blk], self.bases_[blk])
            out[blk] = quantize(coeffs, self.step_sizes_[blk], b)
        return out

    def encode(self, x, split_index: int = 0) -> Bitstream:
        check_is_fitted(self, "codec_id_")
        x = as_activation(x)
        if x.shape != self.tensor_shape_:
            raise ShapeMismatch(
                f"activation shape {x.shape} does not match fitted {self.tensor_shape_}"
            )
        require_finite(x)
        half = 1 << (self.quant_bits - 1)
        symbols = self._index_blocks(x).ravel() + half
        payload, bit_count = self.code_.encode(symbols)
        return Bitstream(
            split_index=int(split_index),
            tensor_shape=self.tensor_shape_,
            model_id=self.codec_id_,
            bit_count=bit_count,
            payload=payload,
        )

    def decode(self, bs: Bitstream) -> np.ndarray:
        check_is_fitted(self, "codec_id_")
        if bs.model_id != self.codec_id_:
            raise ModelMismatch(
                f"bitstream was encoded with codec {bs.model_id:#018x}, "
                f"this codec is {self.codec_id_:#018x}"
            )
        if tuple(bs.tensor_shape) != self.tensor_shape_:
            raise ShapeMismatch(
                f"bitstream shape {bs.tensor_shape} does not match "
                f"fitted {self.tensor_shape_}"
            )
        expected_bytes = (bs.bit_count + 7) // 8
        if len(bs.payload) < expected_bytes:
            raise TruncatedFile("payload shorter than bit count")
        if len(bs.payload) > expected_bytes:
            raise TrailingGarbage("payload longer than bit count")
        _check_pad_bits(bs.payload, bs.bit_count)
        d, m, b, _ = self._validate_params()
        c, h, w = self.tensor_shape_
        positions = h * w
        count = self.n_blocks_ * positions * m
        symbols = self.code_.decode(bs.payload, bs.bit_count, count)
        indices = symbols.reshape(self.n_blocks_, positions, m) - (1 << (b - 1))
        recon = np.zeros((positions, self.n_blocks_ * d), dtype=np.float32)
        for blk in range(self.n_blocks_):
            recon[:, blk * d : (blk + 1) * d] = _reconstruct(
                indices[blk], self.means_[blk], self.bases_[blk], self.step_sizes_[blk]
            )
        return np.ascontiguousarray(recon[:, :c].T.reshape(c, h, w))

    def transform(self, X):
        """Lossy round-trip (identical to decode(encode(x)) per tensor)."""
        check_is_fitted(self, "codec_id_")
        single = not (isinstance(X, np.ndarray) and X.ndim == 4) and np.ndim(X) == 3
        batch = as_activation_batch([X] if single else X)
        out = np.empty_like(batch)
        d, m, _, _ = self._validate_params()
        c, h, w = self.tensor_shape_
        for i, img in enumerate(batch):
            if img.shape != self.tensor_shape_:
                raise ShapeMismatch(
                    f"activation shape {img.shape} does not match "
                    f"fitted {self.tensor_shape_}"
                )
            indices = self._index_blocks(img)
            recon = np.zeros((h * w, self.n_blocks_ * d), dtype=np.float32)
            for blk in range(self.n_blocks_):
                recon[:, blk * d : (blk + 1) * d] = _reconstruct(
                    indices[blk],
                    self.means_[blk],
                    self.bases_[blk],
                    self.step_sizes_[blk],
                )
            out[i] = recon[:, :c].T.reshape(c, h, w)
        return out[0] if single else out

    # -- serialization ---------------------------------------------------

    def _serialize_body(self) -> bytes:
        d, m, b, clip = self._validate_params()
        w = binio.Writer()
        w.raw(CODEC_MAGIC)
        w.u32(CODEC_VERSION)
        w.u32(d)
        w.u32(m)
        w.u32(b)
        w.f32(clip)
        for dim in self.tensor_shape_:
            w.u32(dim)
        for blk in range(self.n_blocks_):
            w.u32(d)
            w.f32_array(self.means_[blk])
            w.u32(d * m)
            w.f32_array(self.bases_[blk].ravel())
            w.u32(m)
            w.f32_array(self.eigenvalues_[blk])
        w.f32_array(self.step_sizes_.ravel())
        w.raw(self.code_lengths_.astype(np.uint8).tobytes())
        return w.getvalue()

    def save(self, path) -> None:
        check_is_fitted(self, "codec_id_")
        body = self._serialize_body()
        with open(path, "wb") as f:
            f.write(body + struct.pack("<Q", binio.fnv1a64(body)))

    @classmethod
    def load(cls, path) -> "ActivationCodec":
        with open(path, "rb") as f:
            data = f.read()
        body = binio.check_trailing_fnv(data)
        r = binio.Reader(body)
        if r.raw(8) != CODEC_MAGIC:
            raise BadMagic(f"not a codec file: {path}")
        version = r.u32()
        if version != CODEC_VERSION:
            raise VersionUnsupported(f"codec version {version}")
        d = r.u32()
        m = r.u32()
        b = r.u32()
        clip = r.f32()
        shape = (r.u32(), r.u32(), r.u32())
        n_blocks = -(-shape[0] // d)
        codec = cls(
            block_size=d, retained_components=m, quant_bits=b, clip_sigmas=clip
        )
        codec.tensor_shape_ = shape
        codec.n_blocks_ = n_blocks
        codec.means_ = np.zeros((n_blocks, d), dtype=np.float32)
        codec.bases_ = np.zeros((n_blocks, d, m), dtype=np.float32)
        codec.eigenvalues_ = np.zeros((n_blocks, m), dtype=np.float32)
        for blk in range(n_blocks):
            codec.means_[blk] = r.f32_array(_expect(r.u32(), d, "mean length"))
            basis = r.f32_array(_expect(r.u32(), d * m, "basis length"))
            codec.bases_[blk] = basis.reshape(d, m)
            codec.eigenvalues_[blk] = r.f32_array(_expect(r.u32(), m, "eigenvalue count"))
        codec.step_sizes_ = r.f32_array(n_blocks * m).reshape(n_blocks, m).copy()
        codec.code_lengths_ = np.frombuffer(r.raw(1 << b), dtype=np.uint8).copy()
        if r.remaining():
            raise TrailingGarbage(f"{r.remaining()} bytes past the code table")
        codec.code_ = CanonicalCode(codec.code_lengths_)
        codec.codec_id_ = struct.unpack("<Q", data[-8:])[0]
        return codec


def _expect(actual: int, expected: int, what: str) -> int:
    if actual != expected:
        raise CorruptPayload(f"{what} is {actual}, expected {expected}")
    return actual


def _step_sizes(eigenvalues32: np.ndarray, quant_bits: int, clip_sigmas) -> np.ndarray:
    """Per-component steps from stored f32 eigenvalues (see module contract)."""
    clip64 = float(np.float32(clip_sigmas))
    out = np.ones(eigenvalues32.shape[0], dtype=np.float32)
    for j, lam32 in enumerate(eigenvalues32):
        lam64 = float(lam32)
        if lam64 > ZERO_VARIANCE_EIGENVALUE:
            out[j] = np.float32(
                2.0 * clip64 * math.sqrt(lam64) / float(1 << quant_bits)
            )
    return out


def fit_block_pca(
    batch: np.ndarray, block_size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full-rank per-block PCA over a calibration batch.

    Returns float32 arrays: means (B, d), bases (B, d, d) with columns in
    descending eigenvalue order, eigenvalues (B, d) clamped at zero.
    """
    per_image = [partition_blocks(img, block_size) for img in batch]
    n_blocks = len(per_image[0])
    d = block_size
    means = np.zeros((n_blocks, d), dtype=np.float32)
    bases = np.zeros((n_blocks, d, d), dtype=np.float32)
    eigs = np.zeros((n_blocks, d), dtype=np.float32)
    for blk in range(n_blocks):
        samples = [blocks[blk] for blocks in per_image]
        mu64, cov64 = _pinned_mean_cov(samples)
        eigvals, eigvecs = symmetric_eig(cov64)
        means[blk] = mu64.astype(np.float32)
        bases[blk] = eigvecs.astype(np.float32)
        eigs[blk] = np.maximum(eigvals, 0.0).astype(np.float32)
    return means, bases, eigs


def _pinned_mean_cov(samples: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Population mean/covariance with the pinned two-level accumulation."""
    d = samples[0].shape[1]
    total = np.zeros(d, dtype=np.float64)
    n = 0
    for s in samples:
        total = total + _sequential_sum(s.astype(np.float64))
        n += s.shape[0]
    mu64 = total / n
    gram = np.zeros((d, d), dtype=np.float64)
    for s in samples:
        dev = s.astype(np.float64) - mu64
        gram = gram + _sequential_sum(dev[:, :, None] * dev[:, None, :])
    return mu64, gram / n


def _project(samples: np.ndarray, mean32: np.ndarray, basis32: np.ndarray) -> np.ndarray:
    """Centered projection, accumulated over basis rows in index order."""
    dev = samples.astype(np.float64) - mean32.astype(np.float64)
    basis64 = basis32.astype(np.float64)
    coeffs = np.zeros((samples.shape[0], basis64.shape[1]), dtype=np.float64)
    for i in range(basis64.shape[0]):
        coeffs += dev[:, i : i + 1] * basis64[i]
    return coeffs


def _reconstruct(
    indices: np.ndarray,
    mean32: np.ndarray,
    basis32: np.ndarray,
    steps32: np.ndarray,
) -> np.ndarray:
    """Back-projection, components in index order, mean added last."""
    basis64 = basis32.astype(np.float64)
    values = dequantize(indices, steps32)
    recon = np.zeros((indices.shape[0], basis64.shape[0]), dtype=np.float64)
    for j in range(basis64.shape[1]):
        recon += values[:, j : j + 1] * basis64[:, j]
    recon += mean32.astype(np.float64)
    return recon.astype(np.float32)
