import numpy as np
import pytest

import skipformer.model as m
from skipformer.data import gen_dataset
from skipformer.model import HiddenState, ModelConfig, ModelParams
from skipformer.numerics import SeededRng, ShapeError


@pytest.fixture(scope="module")
def cfg():
    return ModelConfig()


@pytest.fixture(scope="module")
def params(cfg):
    return ModelParams.init(cfg, seed=7)


@pytest.fixture(scope="module")
def raw(params):
    return params.raw()


def zero_params(cfg) -> dict:
    """All weights zero, layer-norm gains zero: residual-only network."""
    p = {}
    for name, (r, c) in ModelParams.param_shapes(cfg).items():
        p[name] = np.zeros((r, c))
    return p


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ValueError):
            ModelConfig(d_model=64, n_heads=5)

    def test_counts_positive(self):
        with pytest.raises(ValueError):
            ModelConfig(n_enc_layers=0)


class TestEmbeddings:
    def test_empty_text(self, raw, cfg):
        st = m.embed_text([], raw, cfg)
        assert st.data.shape == (0, cfg.d_model)
        assert st.modality == "text" and st.layer == 0

    def test_identical_tokens_identical_rows(self, raw, cfg):
        st = m.embed_text([5, 5], raw, cfg)
        np.testing.assert_array_equal(st.data[0], st.data[1])

    def test_lookup(self, raw, cfg):
        st = m.embed_text([5], raw, cfg)
        np.testing.assert_array_equal(st.data[0], raw["emb"][5])

    def test_overlong_text(self, raw, cfg):
        with pytest.raises(ValueError, match="max_text_len"):
            m.embed_text([3] * (cfg.max_text_len + 1), raw, cfg)

    def test_uniform_grid_identical_rows(self, raw, cfg):
        st = m.embed_image([9] * 16, raw, cfg)
        assert st.modality == "image"
        for row in st.data[1:]:
            np.testing.assert_array_equal(row, st.data[0])

    def test_zero_projection_gives_raw_embedding(self, raw, cfg):
        p = dict(raw)
        p["img_proj"] = np.zeros_like(raw["img_proj"])
        grid = [8, 9, 10, 11] * 4
        st = m.embed_image(grid, p, cfg)
        np.testing.assert_array_equal(st.data, raw["emb"][grid])

    def test_grid_permutation_permutes_rows(self, raw, cfg):
        rng = SeededRng(3)
        grid = [8 + rng.randint(0, 8) for _ in range(16)]
        perm = list(range(16))
        rng.shuffle(perm)
        a = m.embed_image(grid, raw, cfg).data
        b = m.embed_image([grid[i] for i in perm], raw, cfg).data
        np.testing.assert_array_equal(b, a[perm])

    def test_wrong_grid_size(self, raw, cfg):
        with pytest.raises(ShapeError):
            m.embed_image([8] * 15, raw, cfg)


class TestRelativeBias:
    def test_1d_len1_is_center_bucket(self, raw, cfg):
        bias = m.relative_bias_1d(1, raw, cfg)
        center = cfg.rel_bucket_count // 2
        for h in range(cfg.n_heads):
            assert bias[h].shape == (1, 1)
            assert bias[h][0, 0] == raw["rel1d"][center, h]

    def test_1d_depends_only_on_offset(self, raw, cfg):
        bias = m.relative_bias_1d(6, raw, cfg)
        for h in range(cfg.n_heads):
            for off in range(-5, 6):
                vals = {bias[h][i, i + off]
                        for i in range(6) if 0 <= i + off < 6}
                assert len(vals) == 1

    def test_2d_translation_invariance(self, raw, cfg):
        g = cfg.grid_side
        bias = m.relative_bias_2d(g, raw, cfg)

        def cell(r, c):
            return r * g + c

        for h in range(cfg.n_heads):
            # all pairs with the same (dr, dc) share one bias value
            seen = {}
            for r1 in range(g):
                for c1 in range(g):
                    for r2 in range(g):
                        for c2 in range(g):
                            key = (r1 - r2, c1 - c2)
                            v = bias[h][cell(r1, c1), cell(r2, c2)]
                            if key in seen:
                                assert v == seen[key]
                            seen[key] = v


class TestLayerForward:
    def test_zero_weights_identity(self, cfg):
        zp = zero_params(cfg)
        rng = SeededRng(0)
        x = rng.normal(5, cfg.d_model)
        st = HiddenState(x, "text", 0)
        bias = [np.zeros((5, 5))] * cfg.n_heads
        out = m.encoder_layer_forward(st, 1, zp, cfg, bias)
        np.testing.assert_array_equal(out.data, x)
        assert out.layer == 1

    def test_single_token_finite(self, raw, cfg):
        rng = SeededRng(1)
        st = HiddenState(rng.normal(1, cfg.d_model), "text", 0)
        bias = m.relative_bias_1d(1, raw, cfg)
        out = m.encoder_layer_forward(st, 1, raw, cfg, bias)
        assert out.data.shape == (1, cfg.d_model)
        assert np.isfinite(out.data).all()

    def test_random_smoke_shape_finite(self, raw, cfg):
        rng = SeededRng(2)
        bias = m.relative_bias_1d(4, raw, cfg)
        for _ in range(20):
            st = HiddenState(rng.normal(4, cfg.d_model, 3.0), "text", 0)
            out = m.encoder_layer_forward(st, 1, raw, cfg, bias)
            assert out.data.shape == (4, cfg.d_model)
            assert np.isfinite(out.data).all()

    def test_layer_index_out_of_range(self, raw, cfg):
        st = HiddenState(np.zeros((2, cfg.d_model)), "text", 0)
        with pytest.raises(ValueError):
            m.encoder_layer_forward(st, cfg.n_enc_layers + 1, raw, cfg, None)

    def test_decoder_zero_weights_identity(self, cfg):
        zp = zero_params(cfg)
        rng = SeededRng(4)
        x = rng.normal(3, cfg.d_model)
        enc = rng.normal(5, cfg.d_model)
        out = m.decoder_layer_full(x, 1, enc, zp, cfg, m.causal_mask(3))
        np.testing.assert_array_equal(out, x)

    def test_cross_attention_row_permutation_invariance(self, raw, cfg):
        # permuting encoder-output rows must not change decoder output
        rng = SeededRng(5)
        x = rng.normal(2, cfg.d_model)
        enc = rng.normal(6, cfg.d_model)
        perm = [3, 0, 5, 1, 4, 2]
        a = m.decoder_layer_full(x, 1, enc, raw, cfg, m.causal_mask(2))
        b = m.decoder_layer_full(x, 1, enc[perm], raw, cfg, m.causal_mask(2))
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestFullPasses:
    def test_tied_encoder_shared_storage(self, params):
        # both passes read the same tensors; mutate once, observe twice
        raw = params.raw()
        ds = gen_dataset(1, 1, "entail", 4)[0]
        before = m.run_encoder_full(
            m.embed_text(ds.text, raw, params.cfg), raw, params.cfg)[-1].data
        params.tensors["enc.0.self.wq"].data += 0.01
        after = m.run_encoder_full(
            m.embed_text(ds.text, raw, params.cfg), raw, params.cfg)[-1].data
        assert not np.array_equal(before, after)  # raw view shares storage
        params.tensors["enc.0.self.wq"].data -= 0.01

    def test_pass_order_independence(self, raw, cfg):
        ex = gen_dataset(2, 1, "entail", 4)[0]
        img1 = m.run_encoder_full(m.embed_image(ex.grid, raw, cfg), raw, cfg)[-1]
        txt1 = m.run_encoder_full(m.embed_text(ex.text, raw, cfg), raw, cfg)[-1]
        txt2 = m.run_encoder_full(m.embed_text(ex.text, raw, cfg), raw, cfg)[-1]
        img2 = m.run_encoder_full(m.embed_image(ex.grid, raw, cfg), raw, cfg)[-1]
        np.testing.assert_array_equal(img1.data, img2.data)
        np.testing.assert_array_equal(txt1.data, txt2.data)

    def test_forward_finite_for_random_inputs(self, raw, cfg):
        rng = SeededRng(9)
        for _ in range(100):
            grid = [8 + rng.randint(0, 8) for _ in range(16)]
            st = m.run_encoder_full(m.embed_image(grid, raw, cfg),
                                    raw, cfg)[-1]
            assert np.isfinite(st.data).all()


class TestOutputHead:
    def test_zero_state_uniform_softmax(self, raw, cfg):
        st = HiddenState(np.zeros((2, cfg.d_model)), "decoder", 6)
        logits = m.output_head(st, raw, cfg)
        np.testing.assert_array_equal(logits, 0.0)

    def test_shape(self, raw, cfg):
        st = HiddenState(np.ones((3, cfg.d_model)), "decoder", 6)
        assert m.output_head(st, raw, cfg).shape == (3, cfg.vocab_size)

    def test_rejects_non_decoder_state(self, raw, cfg):
        st = HiddenState(np.ones((3, cfg.d_model)), "text", 6)
        with pytest.raises(ValueError):
            m.output_head(st, raw, cfg)

    def test_orthogonal_embedding_argmax(self, cfg):
        p = zero_params(cfg)
        p["head_ln.g"] = np.ones((1, cfg.d_model))
        p["emb"] = np.zeros((cfg.vocab_size, cfg.d_model))
        for k in range(cfg.d_model):
            if k < cfg.vocab_size:
                p["emb"][k, k] = 1.0
        st = HiddenState(p["emb"][10:11].copy(), "decoder", 6)
        logits = m.output_head(st, p, cfg)
        assert int(np.argmax(logits[0])) == 10

    def test_head_norm_scale_invariance(self, raw, cfg):
        # the final norm makes logits invariant to rescaling the state
        rng = SeededRng(11)
        x = rng.normal(2, cfg.d_model)
        a = m.head_logits(x, raw, cfg)
        b = m.head_logits(10.0 * x, raw, cfg)
        # up to the layer-norm epsilon
        np.testing.assert_allclose(a, b, atol=1e-4)

    def test_weight_tying_column_sensitivity(self, cfg):
        # with zero params, perturbing embedding row k moves only column k
        # of the logits (for inputs that do not use token k)
        p = zero_params(cfg)
        p["head_ln.g"] = np.ones((1, cfg.d_model))
        st_tokens = [3, 4]
        k = 20
        x = np.random.default_rng(0).normal(size=(2, cfg.d_model))
        st = HiddenState(x, "decoder", 6)
        base = m.output_head(st, p, cfg)
        p["emb"][k] += 0.5
        moved = m.output_head(st, p, cfg)
        diff = np.abs(moved - base)
        assert diff[:, k].max() > 0
        diff[:, k] = 0
        assert diff.max() == 0
