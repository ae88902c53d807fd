import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wmsync import curvelet as cv
from wmsync import qim
from wmsync.layout import block_slices, generate_layout


class TestQuantizeBand:
    @pytest.mark.parametrize("A,b,want", [(6.0, 0, 6.0), (7.0, 1, 9.0), (8.0, 0, 6.0)])
    def test_hand_traces(self, A, b, want):
        assert qim.quantize_band(A, 3.0, b) == pytest.approx(want)

    def test_half_level_goes_up(self):
        # A/q = 2.5 exactly: the level above carries bit 1
        assert qim.quantize_band(7.5, 3.0, 1) == pytest.approx(9.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            qim.quantize_band(-0.1, 3.0, 0)

    def test_vectorised(self):
        out = qim.quantize_band(np.array([6.0, 7.0, 8.0]), 3.0, np.array([0, 1, 0]))
        assert np.allclose(out, [6.0, 9.0, 6.0])

    def test_exhaustive_property(self):
        A = np.round(np.arange(0, 3001) * 0.01, 2)
        for q in (1.0, 2.0, 3.0, 5.0):
            for b in (0, 1):
                Q = qim.quantize_band(A, q, np.full(A.shape, b))
                assert np.all(qim.decode_mean(Q, q) == b)
                assert np.all(np.abs(Q - A) <= q + 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(A=st.floats(0, 1e4), q=st.floats(0.1, 20), b=st.integers(0, 1))
    def test_property(self, A, q, b):
        Q = qim.quantize_band(A, q, b)
        assert qim.decode_mean(Q, q) == b
        assert abs(Q - A) <= q * (1 + 1e-9)

    @settings(max_examples=100, deadline=None)
    @given(A=st.floats(0, 300), b=st.integers(0, 1), e=st.floats(-0.49, 0.49))
    def test_margin(self, A, b, e):
        q = 3.0
        Q = qim.quantize_band(A, q, b)
        assert qim.decode_mean(Q + e * q, q) == b or Q + e * q < 0


class TestDecodeMean:
    @pytest.mark.parametrize("A,want", [(6.2, 0), (9.0, 1), (4.4, 1), (0.0, 0)])
    def test_examples(self, A, want):
        assert qim.decode_mean(A, 3.0) == want

    def test_round_half_away(self):
        assert np.array_equal(qim.round_half_away([0.5, 1.5, 2.5, -0.5]), [1, 2, 3, -1])


class TestConfig:
    def test_default_pairs(self):
        cfg = qim.QimConfig()
        assert cfg.pairs == tuple((l, l + 8) for l in range(8))
        assert cfg.bits_per_block == 8

    @pytest.mark.parametrize("pairs", [((0, 8),) * 8, tuple((l, l + 8) for l in range(7))])
    def test_pairs_must_cover(self, pairs):
        with pytest.raises(ValueError):
            qim.QimConfig(pairs=pairs)

    def test_q_positive(self):
        with pytest.raises(ValueError):
            qim.QimConfig(q=0)


class TestBlock:
    def test_round_trip(self, photo, rng):
        block = photo[64:128, 128:192]
        bits = rng.integers(0, 2, 8)
        out = qim.embed_block(block, bits)
        assert np.array_equal(qim.decode_block(out), bits)
        means = qim.block_means(out)
        assert np.allclose(means / 3.0, np.round(means / 3.0), atol=1e-6)

    def test_both_bands_scaled(self, photo, rng):
        block = photo[64:128, 128:192]
        bits = rng.integers(0, 2, 8)
        before = cv.forward(block)
        after = cv.forward(qim.embed_block(block, bits))
        for a, b in qim.QimConfig().pairs:
            ratio_a = cv.band_mean_abs(after, 3, a).A / cv.band_mean_abs(before, 3, a).A
            ratio_b = cv.band_mean_abs(after, 3, b).A / cv.band_mean_abs(before, 3, b).A
            assert ratio_a == pytest.approx(ratio_b, rel=1e-6)
            Q = qim.quantize_band(cv.band_mean_abs(before, 3, a).A, 3.0, bits[a])
            assert cv.band_mean_abs(after, 3, a).A == pytest.approx(Q, abs=1e-6)

    def test_six_sevenths(self):
        # a band with mean 7 and target 6 is scaled by 6/7
        block = np.zeros((64, 64))
        pyr = cv.forward(block)
        for l in (0, 8):
            pyr.set_band(3, l, qim._blank_band((64, 64), 3, l, qim.QimConfig()))
            pyr.set_band(3, l, pyr.band(3, l) * 7 / np.mean(np.abs(pyr.band(3, l))))
        block = cv.inverse(pyr)
        assert qim.block_means(block)[0] == pytest.approx(7.0)
        out = cv.forward(qim.embed_block(block, [0] * 8))
        assert np.allclose(out.band(3, 0), cv.forward(block).band(3, 0) * 6 / 7, atol=1e-9)

    def test_fixed_point(self, photo, rng):
        block = qim.embed_block(photo[:64, :64], rng.integers(0, 2, 8))
        again = qim.embed_block(block, qim.decode_block(block))
        assert np.max(np.abs(again - block)) < 1e-6

    def test_blank_block(self, rng):
        bits = rng.integers(0, 2, 8)
        out = qim.embed_block(np.full((64, 64), 128.0), bits)
        assert np.array_equal(qim.decode_block(out), bits)

    def test_wrong_bit_count(self, photo):
        with pytest.raises(ValueError):
            qim.embed_block(photo[:64, :64], [0, 1])

    def test_confidence_range(self, photo):
        c = qim.confidence(qim.block_means(photo[:64, :64]), 3.0)
        assert np.all((c >= 0) & (c <= 1.5))

    @pytest.mark.parametrize("backend", ["python", "cython"])
    def test_backends_agree(self, photo, backend):
        from wmsync import kernels

        if backend == "cython" and kernels.BACKEND != "cython":
            pytest.skip("compiled kernels not built")
        bits = np.arange(8) % 2
        ref = qim.embed_block(photo[:64, :64], bits, backend="python")
        assert np.array_equal(qim.embed_block(photo[:64, :64], bits, backend=backend), ref)


class TestPayloadCodec:
    def test_round_trip(self, layout, test_images):
        for i, img in enumerate(test_images):
            p = qim.Payload.random(256, seed=i)
            assert qim.decode_payload(qim.embed_payload(img, layout, p), layout) == p

    def test_template_blocks_untouched(self, layout, photo):
        out = qim.embed_payload(photo, layout, qim.Payload.random(256, seed=0))
        for y in range(8):
            for x in range(8):
                if layout.K[y, x]:
                    r, c = block_slices(layout, x, y)
                    assert np.max(np.abs(out[r, c] - photo[r, c])) == 0

    def test_capacity(self, layout):
        assert qim.capacity(layout) == 256

    def test_length_mismatch(self, layout, photo):
        with pytest.raises(ValueError):
            qim.embed_payload(photo, layout, qim.Payload.random(255))

    def test_canvas_size_checked(self, layout):
        with pytest.raises(ValueError):
            qim.embed_payload(np.zeros((500, 512)), layout, qim.Payload.random(256))

    def test_no_watermark_blocks(self):
        lay = generate_layout(3, 2, 2, size=128)
        lay = type(lay)(lay.key, 2, 2, np.ones((2, 2), dtype=np.uint8), 64, 64)
        img = np.random.default_rng(0).uniform(0, 255, (128, 128))
        assert np.array_equal(qim.embed_payload(img, lay, qim.Payload(np.zeros(0))), img)

    def test_unrelated_image_is_random(self, layout, test_images):
        p = qim.Payload.random(256, seed=99)
        bers = [np.mean(qim.decode_payload(img, layout).bits != p.bits) for img in test_images]
        assert abs(np.mean(bers) - 0.5) < 0.1

    def test_idempotent_reembedding(self, layout, photo):
        p = qim.Payload.random(256, seed=3)
        once = qim.embed_payload(photo, layout, p)
        twice = qim.embed_payload(once, layout, p)
        assert np.max(np.abs(twice - once)) < 1e-6


class TestPayload:
    def test_hex_round_trip(self):
        p = qim.Payload.random(256, seed=1)
        assert len(p.to_hex()) == 64
        assert qim.Payload.from_hex(p.to_hex(), 256) == p

    def test_hex_msb_first(self):
        assert qim.Payload.from_hex("a").bits.tolist() == [1, 0, 1, 0]
        assert qim.Payload([1, 1, 0]).to_hex() == "c"

    def test_bad_hex(self):
        with pytest.raises(ValueError):
            qim.Payload.from_hex("xyz")
        with pytest.raises(ValueError):
            qim.Payload.from_hex("ff", 9)

    def test_bitfile_round_trip(self):
        p = qim.Payload.random(37, seed=2)
        assert qim.Payload.from_bitfile(p.to_bitfile()) == p
        with pytest.raises(ValueError):
            qim.Payload.from_bitfile(b"0102")

    def test_bits_validated_and_frozen(self):
        with pytest.raises(ValueError):
            qim.Payload([0, 2])
        p = qim.Payload([0, 1])
        with pytest.raises(ValueError):
            p.bits[0] = 1
