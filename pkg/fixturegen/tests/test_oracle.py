import struct

import numpy as np
import pytest

from fixturegen import codec_oracle as oc


class TestSplitBlocks:
    def test_two_exact_blocks(self):
        x = np.arange(2 * 4 * 2 * 2, dtype=np.float32).reshape(8, 2, 2)
        blocks = oc.split_blocks(x, 4)
        assert blocks.shape == (2, 4, 4)
        # position (0,0) of block 0 holds channels 0..3 at that position
        np.testing.assert_array_equal(blocks[0, 0], x[:4, 0, 0])
        np.testing.assert_array_equal(blocks[1, 0], x[4:, 0, 0])

    def test_row_major_position_order(self):
        x = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
        blocks = oc.split_blocks(x, 1)
        np.testing.assert_array_equal(blocks[0, :, 0], [0, 1, 2, 3, 4, 5])

    def test_zero_padding(self):
        x = np.ones((3, 2, 2), dtype=np.float32)
        blocks = oc.split_blocks(x, 2)
        assert blocks.shape == (2, 4, 2)
        np.testing.assert_array_equal(blocks[1, :, 0], np.ones(4))
        np.testing.assert_array_equal(blocks[1, :, 1], np.zeros(4))


class TestMeanCov:
    def test_hand_computed(self):
        # Two "images" of two positions each; population statistics.
        a = np.array([[1.0, 0.0], [3.0, 4.0]], dtype=np.float32)
        b = np.array([[5.0, 4.0], [7.0, 8.0]], dtype=np.float32)
        mean, cov = oc._mean_cov([a, b])
        np.testing.assert_allclose(mean, [4.0, 4.0])
        # deviations: (-3,-4), (-1,0), (1,0), (3,4)
        np.testing.assert_allclose(
            cov, [[(9 + 1 + 1 + 9) / 4, (12 + 12) / 4], [(12 + 12) / 4, 32 / 4]]
        )


class TestOrientedEig:
    def test_descending_order(self):
        vals, vecs = oc._oriented_eig(np.diag([1.0, 5.0, 3.0]))
        np.testing.assert_allclose(vals, [5.0, 3.0, 1.0])
        np.testing.assert_allclose(np.abs(vecs), np.eye(3)[:, [1, 2, 0]], atol=1e-12)

    def test_sign_rule_largest_entry_positive(self):
        cov = np.array([[2.0, -1.0], [-1.0, 2.0]])
        vals, vecs = oc._oriented_eig(cov)
        for j in range(2):
            lead = np.argmax(np.abs(vecs[:, j]))
            assert vecs[lead, j] > 0

    def test_reconstructs(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 6))
        cov = a @ a.T
        vals, vecs = oc._oriented_eig(cov)
        np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, cov, atol=1e-10)


class TestHuffman:
    def test_lengths_hand_derived(self):
        # counts [3,1,1,3]: symbols 1,2 merge (w2), then node+symbol0 (w5),
        # then symbol3 joins last: lengths 2,3,3,1.
        np.testing.assert_array_equal(
            oc._huffman_lengths(np.array([3, 1, 1, 3])), [2, 3, 3, 1]
        )

    def test_leaf_beats_internal_on_ties(self):
        # counts [2,1,1]: symbols 1,2 merge to weight 2; the tie against
        # leaf 0 resolves to the leaf because internal ids start at n.
        np.testing.assert_array_equal(
            oc._huffman_lengths(np.array([2, 1, 1])), [1, 2, 2]
        )

    def test_uniform_counts(self):
        np.testing.assert_array_equal(
            oc._huffman_lengths(np.ones(4, dtype=int)), [2, 2, 2, 2]
        )

    def test_canonical_assignment(self):
        codes = oc._canonical_codes(np.array([2, 3, 3, 1], dtype=np.uint8))
        # (length, symbol) order: sym3 len1 -> 0b0; sym0 len2 -> 0b10;
        # sym1 len3 -> 0b110; sym2 len3 -> 0b111
        assert codes.tolist() == [0b10, 0b110, 0b111, 0b0]

    def test_kraft_equality(self):
        rng = np.random.default_rng(4)
        counts = rng.integers(1, 50, size=32)
        lengths = oc._huffman_lengths(counts)
        assert sum(2.0 ** -int(l) for l in lengths) == pytest.approx(1.0)


class TestBitWriter:
    def test_msb_first_packing(self):
        w = oc._BitWriter()
        w.put(0b101, 3)
        w.put(0b1, 1)
        w.put(0b0110, 4)
        payload, bits = w.getvalue()
        assert bits == 8
        assert payload == bytes([0b10110110])

    def test_partial_byte_zero_padded(self):
        w = oc._BitWriter()
        w.put(0b10101, 5)
        payload, bits = w.getvalue()
        assert bits == 5
        assert payload == bytes([0b10101000])


def correlated_batch(n=24, c=8, h=4, w=4, seed=0):
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n, 2, h, w))
    mix = rng.standard_normal((c, 2))
    acts = np.einsum("cl,nlhw->nchw", mix, latent)
    return (acts + 0.05 * rng.standard_normal(acts.shape)).astype(np.float32)


class TestFitOracleCodec:
    def test_serialized_layout(self):
        acts = correlated_batch()
        codec = oc.fit_oracle_codec(acts, d=4, m=2, b=4)
        blob = codec.serialize()
        assert blob[:8] == b"SPLITCDC"
        version, d, m, b = struct.unpack_from("<IIII", blob, 8)
        assert (version, d, m, b) == (1, 4, 2, 4)
        # trailing checksum doubles as the codec id
        (tail,) = struct.unpack_from("<Q", blob, len(blob) - 8)
        assert tail == codec.codec_id

    def test_step_formula(self):
        acts = correlated_batch()
        codec = oc.fit_oracle_codec(acts, d=4, m=2, b=6, clip=4.0)
        lam = float(codec.eigenvalues[0, 0])
        expected = np.float32(2.0 * 4.0 * np.sqrt(lam) / 64.0)
        assert codec.steps[0, 0] == expected

    def test_bitstream_header(self):
        acts = correlated_batch()
        codec = oc.fit_oracle_codec(acts, d=4, m=2, b=4)
        stream = codec.encode(acts[0], split_index=7)
        assert stream[:8] == b"SPLITBIT"
        version, k, c, h, w, model_id, bit_count = struct.unpack_from(
            "<IIIIIQQ", stream, 8
        )
        assert (version, k, (c, h, w)) == (1, 7, acts.shape[1:])
        assert model_id == codec.codec_id
        assert len(stream) == 44 + -(-bit_count // 8)

    def test_deterministic(self):
        acts = correlated_batch()
        a = oc.fit_oracle_codec(acts, d=4, m=3, b=5)
        b = oc.fit_oracle_codec(acts, d=4, m=3, b=5)
        assert a.serialize() == b.serialize()
        assert a.encode(acts[1], 2) == b.encode(acts[1], 2)

    def test_index_clamping(self):
        acts = correlated_batch()
        codec = oc.fit_oracle_codec(acts, d=4, m=2, b=2)
        idx = codec.indices(100.0 * acts[0])
        assert idx.min() >= -2 and idx.max() <= 1
