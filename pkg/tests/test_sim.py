"""Encoder simulator: operation semantics, shape soundness, param counts.

Derivative assertions use central differences as the oracle; parameter
counts are checked against brute-force tensor materialization.
"""

import numpy as np
import pytest

from boshnas.errors import SimShapeError
from boshnas.sim import (
    build_weights,
    dct_matrix,
    dsc_conv,
    forward,
    load_weights,
    lt_mix,
    param_count,
    relative_attention,
    save_weights,
    sdp_wma_head,
    softmax_rows,
)
from boshnas.space import DesignSpaceConfig, ModelCard, bert_tiny, enumerate_cards

MINI_CARD = ModelCard(
    l=4,
    o=("SA", "SA", "LT", "LT"),
    n=(2, 2, 4, 4),
    h=(256, 256, 128, 128),
    f=((512, 512, 512), (512, 512, 512), (1024,), (1024,)),
    p=("SDP", "SDP", "DCT", "DCT"),
)


def head_weights(rng, d, nd, wma=False):
    w = {
        "wq": rng.normal(size=(d, nd)),
        "wk": rng.normal(size=(d, nd)),
        "wv": rng.normal(size=(d, nd)),
        "wo": rng.normal(size=(nd, d)),
    }
    if wma:
        w["wa"] = rng.normal(size=(nd, nd))
    return w


class TestAttentionHead:
    def test_single_token_degenerates_to_value_projection(self, rng):
        w = head_weights(rng, 8, 4)
        x = rng.normal(size=(1, 8))
        got = sdp_wma_head(x, w, "SDP")
        np.testing.assert_allclose(got, x @ w["wv"] @ w["wo"], atol=1e-12)

    def test_wma_with_scaled_identity_equals_sdp(self, rng):
        d, nd = 8, 4
        w = head_weights(rng, d, nd, wma=True)
        w["wa"] = np.eye(nd) / np.sqrt(d)
        x = rng.normal(size=(5, d))
        np.testing.assert_allclose(
            sdp_wma_head(x, w, "WMA"), sdp_wma_head(x, w, "SDP"), atol=1e-12
        )

    def test_softmax_rows_sum_to_one(self, rng):
        for scale in (1.0, 50.0, 2000.0):
            s = softmax_rows(rng.normal(size=(4, 8)) * scale)
            np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
            assert (s >= 0).all()

    def test_shape_mismatch_raises(self, rng):
        w = head_weights(rng, 8, 4)
        with pytest.raises(SimShapeError, match="width"):
            sdp_wma_head(rng.normal(size=(3, 6)), w, "SDP")

    def test_unknown_variant(self, rng):
        with pytest.raises(ValueError, match="variant"):
            sdp_wma_head(rng.normal(size=(3, 8)), head_weights(rng, 8, 4), "MAX")


class TestRelativeAttention:
    def test_zero_encodings_average_values(self, rng):
        x = rng.normal(size=(6, 8))
        q = rng.normal(size=(6, 4))
        v = rng.normal(size=(6, 8))
        got = relative_attention(x, q, np.zeros((6, 4)), v)
        np.testing.assert_allclose(got, np.tile(v.mean(axis=0), (6, 1)), atol=1e-12)

    def test_single_token_passes_value_through(self, rng):
        x, q = rng.normal(size=(1, 8)), rng.normal(size=(1, 4))
        r, v = rng.normal(size=(1, 4)), rng.normal(size=(1, 8))
        np.testing.assert_allclose(relative_attention(x, q, r, v), v, atol=1e-12)

    def test_derivative_wrt_encoding_entry(self, rng):
        # central difference vs the analytic softmax directional derivative
        n_t, dq, d = 5, 3, 4
        x = rng.normal(size=(n_t, d))
        q = rng.normal(size=(n_t, dq))
        r = rng.normal(size=(n_t, dq))
        v = rng.normal(size=(n_t, d))
        a, b = 2, 1
        eps = 1e-5
        bumped = r.copy()
        bumped[a, b] += eps
        dipped = r.copy()
        dipped[a, b] -= eps
        numeric = (
            relative_attention(x, q, bumped, v) - relative_attention(x, q, dipped, v)
        ) / (2 * eps)
        scores = q @ r.T / np.sqrt(dq)
        probs = softmax_rows(scores)
        d_scores = np.zeros((n_t, n_t))
        d_scores[:, a] = q[:, b] / np.sqrt(dq)
        d_probs = probs * (d_scores - (probs * d_scores).sum(axis=1, keepdims=True))
        analytic = d_probs @ v
        np.testing.assert_allclose(numeric, analytic, rtol=1e-4, atol=1e-8)

    def test_shape_mismatch_raises(self, rng):
        with pytest.raises(SimShapeError):
            relative_attention(
                rng.normal(size=(4, 8)),
                rng.normal(size=(4, 3)),
                rng.normal(size=(5, 3)),
                rng.normal(size=(4, 8)),
            )


class TestLinearTransform:
    def test_dct_matrix_is_orthonormal(self):
        for n in (2, 4, 7, 16):
            c = dct_matrix(n)
            assert np.abs(c.T @ c - np.eye(n)).max() < 1e-10

    @pytest.mark.parametrize("variant", ["DFT", "DCT"])
    def test_linearity(self, variant, rng):
        x, y = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
        a, b = 2.5, -1.25
        lhs = lt_mix(a * x + b * y, variant)
        rhs = a * lt_mix(x, variant) + b * lt_mix(y, variant)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dft_constant_columns_concentrate_in_dc_row(self, rng):
        x = np.tile(rng.normal(size=(1, 4)), (4, 1))  # every column constant
        out = lt_mix(x, "DFT")
        assert np.abs(out[1:]).max() < 1e-10
        assert np.abs(out[0]).max() > 0

    def test_unknown_variant(self, rng):
        with pytest.raises(ValueError, match="variant"):
            lt_mix(rng.normal(size=(4, 4)), "DWT")


class TestDscConv:
    def test_identity_kernel_without_gates_is_identity(self, rng):
        x = rng.normal(size=(6, 3))
        kernel = np.zeros((5, 3))
        kernel[2] = 1.0
        np.testing.assert_allclose(dsc_conv(x, kernel), x, atol=1e-12)

    def test_averaging_kernel_on_ones_shows_boundary_attenuation(self):
        x = np.ones((6, 2))
        kernel = np.full((5, 2), 1 / 5)
        got = dsc_conv(x, kernel)
        want = np.array([3 / 5, 4 / 5, 1.0, 1.0, 4 / 5, 3 / 5])
        np.testing.assert_allclose(got, np.tile(want[:, None], (1, 2)), atol=1e-12)

    def test_output_shape_matches_input(self, rng):
        for n_t, d, k in ((1, 4, 5), (3, 2, 9), (16, 7, 5)):
            x = rng.normal(size=(n_t, d))
            assert dsc_conv(x, rng.normal(size=(k, d))).shape == x.shape

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(SimShapeError, match="odd"):
            dsc_conv(rng.normal(size=(4, 2)), np.ones((4, 2)))

    def test_gates_scale_output(self, rng):
        x = rng.normal(size=(5, 3))
        kernel = rng.normal(size=(5, 3))
        full = dsc_conv(x, kernel)
        np.testing.assert_allclose(
            dsc_conv(x, kernel, gates=np.full(x.shape, 0.5)), 0.5 * full, atol=1e-12
        )


class TestForward:
    def test_bert_tiny_output_shape(self):
        out = forward(bert_tiny(), np.random.default_rng(0).normal(size=(8, 128)))
        assert out.shape == (8, 128)
        assert np.isfinite(out).all()

    def test_mini_card_ends_at_128(self, rng):
        out = forward(MINI_CARD, rng.normal(size=(6, 256)))
        assert out.shape == (6, 128)

    def test_projection_changes_intermediate_width(self, rng):
        card = ModelCard(
            l=2, o=("SA", "SA"), n=(2, 2), h=(128, 256),
            f=((512,), (512,)), p=("SDP", "SDP"),
        )
        out, trace = forward(card, rng.normal(size=(4, 128)), trace=True)
        assert trace[0].shape == (4, 256)
        assert out.shape == (4, 256)

    def test_wrong_input_width_raises(self, rng):
        with pytest.raises(SimShapeError, match="width"):
            forward(bert_tiny(), rng.normal(size=(4, 64)))

    def test_seed_determinism(self, rng):
        x = rng.normal(size=(4, 128))
        a = forward(bert_tiny(), x, seed=7)
        b = forward(bert_tiny(), x, seed=7)
        c = forward(bert_tiny(), x, seed=8)
        np.testing.assert_array_equal(a, b)
        assert np.abs(a - c).max() > 0

    def test_shape_soundness_sweep(self, table2_config):
        library = list(enumerate_cards(table2_config))
        rng = np.random.default_rng(3)
        picks = rng.choice(len(library), size=500, replace=False)
        for i, idx in enumerate(picks):
            card = library[int(idx)]
            n_t = (1, 4, 16)[i % 3]
            out = forward(card, rng.normal(size=(n_t, card.h[0])), seed=i)
            assert out.shape == (n_t, card.h[card.l - 1])
            assert np.isfinite(out).all()


def _array_sizes(obj):
    if isinstance(obj, np.ndarray):
        return obj.size
    if isinstance(obj, dict):
        return sum(_array_sizes(v) for v in obj.values())
    if isinstance(obj, list):
        return sum(_array_sizes(v) for v in obj)
    return 0


class TestParamCount:
    def test_bert_tiny_by_hand(self):
        d, ff, n_t = 128, 512, 128
        attention = 4 * d * d  # q, k, v, o projections across both heads
        ff_chain = d * ff + ff + ff * d + d
        norms = 4 * d
        per_layer = attention + ff_chain + norms
        assert param_count(bert_tiny(), n_tokens=n_t) == 2 * per_layer

    def test_oracle_materialization_on_random_cards(self, table2_config):
        library = list(enumerate_cards(table2_config))
        rng = np.random.default_rng(5)
        picks = rng.choice(len(library), size=100, replace=False)
        for idx in picks:
            card = library[int(idx)]
            want = _array_sizes(build_weights(card, n_tokens=128, seed=0))
            assert param_count(card, n_tokens=128) == want

    def test_widening_ff_strictly_increases(self):
        slim = bert_tiny()
        wide = ModelCard(
            l=2, o=slim.o, n=slim.n, h=slim.h,
            f=((1024,), (512,)), p=slim.p,
        )
        assert param_count(wide) > param_count(slim)

    def test_vocab_mode_adds_embedding_tables(self):
        card = bert_tiny()
        delta = param_count(card, vocab_excluded=False) - param_count(card)
        assert delta == (30522 + 512 + 2) * 128 + 2 * 128


class TestWeightPersistence:
    def test_roundtrip_preserves_forward(self, tmp_path, rng):
        card = MINI_CARD
        x = rng.normal(size=(5, 256))
        weights = build_weights(card, n_tokens=5, seed=3)
        path = tmp_path / "weights.json"
        save_weights(weights, path)
        loaded = load_weights(path)
        np.testing.assert_array_equal(
            forward(card, x, seed=3), forward(card, x, weights=loaded)
        )
