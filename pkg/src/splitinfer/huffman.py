"""Canonical Huffman coding over a fixed alphabet, bit-exact.

The code is fully determined by its length table, so only lengths are
stored in codec files. Construction ties are broken deterministically:
at equal weight the lower symbol value wins, and internal nodes rank
after all symbols, ordered by creation. Codewords are assigned in
``(length, symbol)`` order and packed MSB-first within bytes.
"""

from __future__ import annotations

import heapq

import numpy as np

from .errors import CorruptPayload

MAX_CODE_BITS = 64


def build_code_lengths(counts) -> np.ndarray:
    """Optimal prefix code lengths for symbol frequencies (all counts >= 1)."""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.size
    if n < 2:
        raise ValueError("alphabet must have at least two symbols")
    if np.any(counts < 1):
        raise ValueError("all counts must be >= 1 (smoothing is the caller's job)")
    # heap entries: (weight, ordinal, node id); ordinal orders ties.
    heap = [(int(counts[sym]), sym, sym) for sym in range(n)]
    heapq.heapify(heap)
    left = {}
    right = {}
    next_id = n
    while len(heap) > 1:
        w1, _, n1 = heapq.heappop(heap)
        w2, _, n2 = heapq.heappop(heap)
        left[next_id] = n1
        right[next_id] = n2
        heapq.heappush(heap, (w1 + w2, next_id, next_id))
        next_id += 1
    root = heap[0][2]
    lengths = np.zeros(n, dtype=np.uint8)
    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        if node < n:
            lengths[node] = depth
            continue
        stack.append((left[node], depth + 1))
        stack.append((right[node], depth + 1))
    if int(lengths.max()) > MAX_CODE_BITS:
        raise ValueError("code length exceeds 64 bits")
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    """Codewords assigned in (length, symbol) order; index = symbol."""
    lengths = np.asarray(lengths, dtype=np.uint8)
    order = sorted(range(lengths.size), key=lambda s: (int(lengths[s]), s))
    codes = np.zeros(lengths.size, dtype=np.uint64)
    code = 0
    prev_len = int(lengths[order[0]])
    for sym in order:
        length = int(lengths[sym])
        code <<= length - prev_len
        codes[sym] = code
        code += 1
        prev_len = length
    return codes


class CanonicalCode:
    """Encoder/decoder for one canonical length table."""

    def __init__(self, lengths):
        self.lengths = np.asarray(lengths, dtype=np.uint8)
        if self.lengths.size < 2 or np.any(self.lengths < 1):
            raise ValueError("every symbol needs a code length >= 1")
        self.codes = canonical_codes(self.lengths)
        self.max_len = int(self.lengths.max())
        # per-length tables for canonical decoding
        self._first_code = [0] * (self.max_len + 1)
        self._count = [0] * (self.max_len + 1)
        self._symbols = [np.zeros(0, dtype=np.int64)] * (self.max_len + 1)
        for length in range(1, self.max_len + 1):
            members = np.flatnonzero(self.lengths == length)
            self._count[length] = members.size
            self._symbols[length] = members
            if members.size:
                self._first_code[length] = int(self.codes[members[0]])

    def encode(self, symbols) -> tuple[bytes, int]:
        """Pack symbols into MSB-first bytes; returns (payload, bit_count)."""
        symbols = np.asarray(symbols, dtype=np.int64)
        if symbols.size == 0:
            return b"", 0
        lens = self.lengths[symbols].astype(np.int64)
        codes = self.codes[symbols]
        total_bits = int(lens.sum())
        starts = np.cumsum(lens) - lens
        bits = np.zeros(total_bits, dtype=np.uint8)
        for j in range(int(lens.max())):
            live = lens > j
            shift = (lens[live] - 1 - j).astype(np.uint64)
            bits[starts[live] + j] = ((codes[live] >> shift) & np.uint64(1)).astype(np.uint8)
        return np.packbits(bits).tobytes(), total_bits

    def decode(self, payload: bytes, bit_count: int, symbol_count: int) -> np.ndarray:
        """Decode exactly ``symbol_count`` symbols from ``bit_count`` bits."""
        if symbol_count == 0:
            if bit_count != 0:
                raise CorruptPayload("bits present but no symbols expected")
            return np.zeros(0, dtype=np.int64)
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
        if bit_count > bits.size:
            raise CorruptPayload(f"header claims {bit_count} bits, payload has {bits.size}")
        out = np.empty(symbol_count, dtype=np.int64)
        first_code = self._first_code
        count = self._count
        symbols = self._symbols
        max_len = self.max_len
        code = 0
        length = 0
        produced = 0
        for pos in range(bit_count):
            code = (code << 1) | int(bits[pos])
            length += 1
            if length <= max_len and count[length]:
                offset = code - first_code[length]
                if 0 <= offset < count[length]:
                    out[produced] = symbols[length][offset]
                    produced += 1
                    if produced == symbol_count:
                        if pos + 1 != bit_count:
                            raise CorruptPayload(
                                f"{bit_count - pos - 1} unread payload bits remain"
                            )
                        return out
                    code = 0
                    length = 0
                    continue
            if length > max_len:
                raise CorruptPayload("invalid codeword")
        raise CorruptPayload(
            f"payload exhausted after {produced} of {symbol_count} symbols"
        )
