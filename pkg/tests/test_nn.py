import math

import numpy as np
import pytest

from poselift import autodiff as ad
from poselift.autodiff import Tensor, gelu, layer_norm, softmax
from poselift.nn import (AttentionConfig, GradCheckReport, gradient_check,
                         init_attention, init_mlp, linear, mlp_block,
                         multi_head_attention, sdp_attention)

from reference import unrolled_multi_head


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def ones_ln(d):
    return Tensor(np.ones(d, dtype=np.float64)), Tensor(np.zeros(d, dtype=np.float64))


class TestLayerNorm:
    def test_constant_vector_collapses_to_beta(self):
        g, b = ones_ln(4)
        x = Tensor(np.full((2, 4), 7.0))
        out = layer_norm(x, g, b)
        assert np.allclose(out.data, 0.0, atol=1e-4)

    def test_two_point_exact(self):
        g, b = ones_ln(2)
        out = layer_norm(Tensor(np.array([[1.0, 3.0]])), g, b, eps=0.0)
        assert np.allclose(out.data, [[-1.0, 1.0]])

    def test_output_statistics(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(3.0, 2.0, size=(64, 32)))
        gamma = Tensor(np.full(32, 1.5))
        beta = Tensor(np.full(32, -0.5))
        out = layer_norm(x, gamma, beta).data
        assert np.allclose(out.mean(axis=-1), -0.5, atol=1e-5)
        assert np.allclose(out.std(axis=-1), 1.5, atol=1e-3)

    def test_shape_mismatch_rejected(self):
        g, b = ones_ln(3)
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.zeros((2, 4))), g, b)


class TestGelu:
    def test_zero_maps_to_zero(self):
        assert gelu(Tensor(np.zeros(3))).data.sum() == 0.0

    def test_asymptotes(self):
        out = gelu(Tensor(np.array([12.0, -12.0]))).data
        assert out[0] == pytest.approx(12.0, abs=1e-9)
        assert out[1] == pytest.approx(0.0, abs=1e-9)

    def test_unit_value_against_normal_cdf(self):
        # high-precision Phi(1) via the complementary error function
        phi1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        out = gelu(Tensor(np.array([1.0], dtype=np.float64))).data[0]
        assert out == pytest.approx(1.0 * phi1, abs=1e-6)


class TestSdpAttention:
    def test_single_token_returns_value_row(self):
        q = t64([[1.0, 2.0]], grad=False)
        k = t64([[0.3, -0.4]], grad=False)
        v = t64([[5.0, -7.0]], grad=False)
        out = sdp_attention(q, k, v, 2)
        assert np.allclose(out.data, v.data)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        q = Tensor(rng.normal(size=(3, 4)))
        k = Tensor(np.tile(rng.normal(size=(1, 4)), (5, 1)))
        v = Tensor(rng.normal(size=(5, 4)))
        out = sdp_attention(q, k, v, 4)
        assert np.allclose(out.data, v.data.mean(axis=0), atol=1e-12)

    def test_two_by_two_against_direct_softmax(self):
        q = np.array([[10.0, 0.0], [0.0, 10.0]])
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = sdp_attention(t64(q, False), t64(q, False), t64(v, False), 1).data
        # direct 64-bit softmax arithmetic, scalar math only
        expected = np.empty((2, 2))
        for r in range(2):
            logits = [q[r] @ q[0] / 1.0, q[r] @ q[1] / 1.0]
            mx = max(logits)
            ws = [math.exp(l - mx) for l in logits]
            z = sum(ws)
            expected[r] = (ws[0] * v[0] + ws[1] * v[1]) / z
        assert np.allclose(out, expected, atol=1e-6)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        s = softmax(Tensor(rng.normal(size=(6, 9)) * 10.0))
        assert np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5))
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 123.0)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            sdp_attention(t64([[1.0]]), t64([[1.0]]), t64([[1.0]]), 0)


class TestMultiHeadAttention:
    def test_single_head_identity_projections_match_sdp(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(5, 3)))
        eye = np.eye(3)
        params = {f"w{n}": Tensor(eye.copy()) for n in "qkvo"}
        params.update({f"b{n}": Tensor(np.zeros(3)) for n in "qkvo"})
        cfg = AttentionConfig(1, 3)
        got = multi_head_attention(x, x, params, cfg)
        want = sdp_attention(x, x, x, 3)
        assert np.allclose(got.data, want.data, atol=1e-12)

    def test_single_token_is_projected_value(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(1, 4)))
        params = init_attention(np.random.default_rng(6), 4, np.float64)
        cfg = AttentionConfig(2, 4)
        got = multi_head_attention(x, x, params, cfg).data
        v = x.data @ params["wv"].data + params["bv"].data
        want = v @ params["wo"].data + params["bo"].data
        assert np.allclose(got, want, atol=1e-12)

    def test_two_heads_match_unrolled_loop(self):
        rng = np.random.default_rng(7)
        x_q = Tensor(rng.normal(size=(2, 6, 8)))
        x_kv = Tensor(rng.normal(size=(2, 4, 8)))
        params = init_attention(np.random.default_rng(8), 8, np.float64)
        got = multi_head_attention(x_q, x_kv, params, AttentionConfig(2, 8)).data
        want = unrolled_multi_head(x_q.data, x_kv.data, params, 2)
        assert np.allclose(got, want, atol=1e-10)

    def test_equal_keys_permutation_invariant(self):
        rng = np.random.default_rng(9)
        x_q = Tensor(rng.normal(size=(3, 8)))
        row = rng.normal(size=(1, 8))
        kv = np.tile(row, (6, 1))
        params = init_attention(np.random.default_rng(10), 8, np.float64)
        cfg = AttentionConfig(4, 8)
        a = multi_head_attention(x_q, Tensor(kv), params, cfg).data
        perm = kv[rng.permutation(6)]
        b = multi_head_attention(x_q, Tensor(perm), params, cfg).data
        assert np.allclose(a, b, atol=1e-12)

    def test_indivisible_width_rejected(self):
        with pytest.raises(ValueError):
            AttentionConfig(8, 65)


class TestMlpBlock:
    def test_zero_weights_give_bias_only(self):
        params = {"w1": Tensor(np.zeros((3, 6))), "b1": Tensor(np.zeros(6)),
                  "w2": Tensor(np.zeros((6, 3))), "b2": Tensor(np.array([1.0, 2.0, 3.0]))}
        out = mlp_block(Tensor(np.ones((4, 3))), params)
        assert np.allclose(out.data, [1.0, 2.0, 3.0])

    def test_one_by_one_identity_weights_reproduce_gelu(self):
        params = {"w1": Tensor(np.array([[1.0]])), "b1": Tensor(np.zeros(1)),
                  "w2": Tensor(np.array([[2.0]])), "b2": Tensor(np.zeros(1))}
        x = np.array([[0.5], [-0.3]])
        out = mlp_block(Tensor(x), params).data
        want = 2.0 * gelu(Tensor(x)).data
        assert np.allclose(out, want, atol=1e-12)

    def test_random_case_equals_naive_matmuls(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(5, 4))
        params = init_mlp(np.random.default_rng(12), 4, 9, 4, np.float64)
        got = mlp_block(Tensor(x), params).data
        hidden = x @ params["w1"].data + params["b1"].data
        act = gelu(Tensor(hidden)).data
        want = act @ params["w2"].data + params["b2"].data
        assert np.allclose(got, want, atol=1e-12)


def _scalarize(out, rng):
    w = Tensor(rng.normal(size=out.shape))
    return (out * w).sum()


class TestGradientCheck:
    def test_linear_function_exact(self):
        rng = np.random.default_rng(20)
        x = t64(rng.normal(size=(4, 3)))
        w = t64(rng.normal(size=(3, 2)))
        params = {"x": x, "w": w}
        report = gradient_check(lambda: (x @ w).sum(), params, step=1e-5, tol=1e-4)
        assert report.ok
        assert report.max_rel_err < 1e-9

    def test_layer_norm_gelu_composite(self):
        rng = np.random.default_rng(21)
        x = t64(rng.normal(size=(3, 5)))
        g = t64(rng.normal(size=5) + 1.0)
        b = t64(rng.normal(size=5))
        probe = rng.normal(size=(3, 5))

        def f():
            return (gelu(layer_norm(x, g, b)) * Tensor(probe)).sum()

        report = gradient_check(f, {"x": x, "g": g, "b": b}, step=1e-5, tol=1e-4)
        assert report.ok, report.per_param

    def test_corrupted_gradient_detected(self):
        rng = np.random.default_rng(22)
        x = t64(rng.normal(size=(3, 3)))

        def f():
            out = (x * x).sum()
            # sabotage the backward rule so analytic != numeric
            out._backward = lambda g: x.accumulate(np.full_like(x.data, 100.0))
            return out

        report = gradient_check(f, {"x": x}, step=1e-5, tol=1e-4)
        assert not report.ok
        assert report.max_rel_err > 1e-4

    @pytest.mark.parametrize("prim", ["layer_norm", "gelu", "sdp", "mha", "mlp"])
    def test_primitives_pass_on_five_random_shapes(self, prim):
        rng = np.random.default_rng(hash(prim) % (2 ** 32))
        for rep in range(5):
            n = int(rng.integers(2, 6))
            d = int(rng.integers(2, 5)) * 2
            if prim == "layer_norm":
                x = t64(rng.normal(size=(n, d)))
                g = t64(rng.normal(size=d) + 1.0)
                b = t64(rng.normal(size=d))
                params = {"x": x, "g": g, "b": b}
                probe = rng.normal(size=(n, d))
                f = lambda: (layer_norm(x, g, b) * Tensor(probe)).sum()
            elif prim == "gelu":
                x = t64(rng.normal(size=(n, d)))
                params = {"x": x}
                probe = rng.normal(size=(n, d))
                f = lambda: (gelu(x) * Tensor(probe)).sum()
            elif prim == "sdp":
                q = t64(rng.normal(size=(n, d)))
                k = t64(rng.normal(size=(n, d)))
                v = t64(rng.normal(size=(n, d)))
                params = {"q": q, "k": k, "v": v}
                probe = rng.normal(size=(n, d))
                f = lambda: (sdp_attention(q, k, v, d) * Tensor(probe)).sum()
            elif prim == "mha":
                x = t64(rng.normal(size=(n, d)))
                params = dict(init_attention(rng, d, np.float64))
                cfg = AttentionConfig(2, d)
                probe = rng.normal(size=(n, d))
                params_all = {"x": x, **params}
                f = lambda: (multi_head_attention(x, x, params, cfg) * Tensor(probe)).sum()
                params = params_all
            else:
                x = t64(rng.normal(size=(n, d)))
                params = dict(init_mlp(rng, d, 2 * d, d, np.float64))
                mlp_params = params
                probe = rng.normal(size=(n, d))
                params = {"x": x, **mlp_params}
                f = lambda: (mlp_block(x, mlp_params) * Tensor(probe)).sum()
            report = gradient_check(f, params, step=1e-5, tol=1e-4)
            assert report.ok, (prim, rep, report.per_param)
