import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abmkit import abm
from abmkit import tensor as tn
from abmkit.abm import AbmParams, AbmStack, Linear, VariantSpec
from abmkit.gradcheck import case_problem
from abmkit.tensor import DimensionError, Tensor


def rand_params(rng, C_a, C_b, D, R, activation="relu", biases=True):
    p = AbmParams.random(C_a, C_b, D, R, rng=rng, activation=activation, requires_grad=False)
    if not biases:
        return p
    arrs = p.arrays()
    arrs.update(bias_a=rng.normal(0, 0.3, R), bias_b=rng.normal(0, 0.3, R), bias_out=rng.normal(0, 0.3, D))
    return AbmParams.from_arrays(**arrs, activation=activation)


def g(p, x, y):
    return abm.abm_g_forward(p, Tensor(x), Tensor(y)).data


class TestVariantSpec:
    def test_m_is_fixed(self):
        with pytest.raises(ValueError):
            VariantSpec("C", m=5)

    def test_beta_range(self):
        with pytest.raises(ValueError):
            VariantSpec("A", beta=1.5)

    @pytest.mark.parametrize("beta,C,d", [(0, 8, 0), (0.25, 8, 2), (0.5, 4, 2), (1, 4, 4), (0.5, 3, 2), (0.1, 5, 1)])
    def test_dynamic_channels_round_half_up(self, beta, C, d):
        assert abm.dynamic_channels(beta, C) == d

    def test_json_round_trip(self):
        spec = VariantSpec("A", beta=0.5)
        assert VariantSpec.from_dict(spec.to_dict()) == spec
        assert spec.to_dict() == {"kind": "A", "m": 3, "beta": 0.5, "boundary": "replicate"}
        with pytest.raises(ValueError):
            VariantSpec.from_dict({"kind": "A", "gamma": 1})

    @given(st.sampled_from(["G", "S", "C", "A"]), st.sampled_from([0.0, 0.25, 0.5, 1.0]), st.integers(1, 40))
    def test_frame_channels_inverts_input_width(self, kind, beta, C):
        spec = VariantSpec(kind, beta=beta)
        assert spec.frame_channels(spec.input_width(C)) == C


class TestNaiveBilinear:
    def test_zero_weight(self, rng):
        out = abm.naive_bilinear(np.zeros((2, 3, 4)), rng.standard_normal(3), rng.standard_normal(4))
        np.testing.assert_array_equal(out.data, np.zeros(2))

    def test_scalar(self):
        np.testing.assert_array_equal(abm.naive_bilinear([[[2.0]]], [3.0], [5.0]).data, [30.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            abm.naive_bilinear(np.zeros((1, 2, 2)), np.zeros(3), np.zeros(2))

    def test_matches_exact_factorization(self, rng):
        W = rng.standard_normal((2, 3, 2))
        p = abm.factorize_exact(W)
        x, y = rng.standard_normal(3), rng.standard_normal(2)
        np.testing.assert_allclose(g(p, x, y), abm.naive_bilinear(W, x, y).data, atol=1e-12)


class TestFactorization:
    def test_scalar_case(self):
        p = abm.factorize_exact(np.array([[[4.0]]]))
        assert p.u.data.tolist() == [[4.0]] and p.a.data.tolist() == [[1.0]] and p.b.data.tolist() == [[1.0]]

    def test_rank_is_product(self, rng):
        assert abm.factorize_exact(rng.standard_normal((2, 3, 4))).R == 12

    def test_reconstruction_exact(self, rng):
        W = rng.standard_normal((3, 2, 4))
        np.testing.assert_array_equal(abm.reconstruct_weight(abm.factorize_exact(W)), W)

    def test_rank_one_least_squares_refit(self, rng):
        u0, a0, b0 = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2)
        W = np.einsum("k,i,j->kij", u0, a0, b0)
        p = abm.factorize_als(W, 1, rng=rng)
        np.testing.assert_allclose(abm.reconstruct_weight(p), W, atol=1e-8)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
    def test_oracle_equivalence(self, D, C, Cp, seed):
        r = np.random.default_rng(seed)
        W = r.standard_normal((D, C, Cp))
        p = abm.factorize_exact(W)
        x, y = r.standard_normal((10, C)), r.standard_normal((10, Cp))
        oracle = np.stack([abm.naive_bilinear(W, xi, yi).data for xi, yi in zip(x, y)])
        np.testing.assert_allclose(g(p, x, y), oracle, atol=1e-12, rtol=0)


class TestAbmG:
    def test_constrained_branch_is_two_layer_net(self, rng):
        p = rand_params(rng, 5, 4, 3, 6)
        arrs = p.arrays()
        arrs.update(b=np.zeros((4, 6)), bias_b=np.ones(6))
        p = AbmParams.from_arrays(**arrs, activation="relu")
        x, y = rng.standard_normal((20, 5)), rng.standard_normal((20, 4))
        mlp = np.maximum(x @ arrs["a"] + arrs["bias_a"], 0) @ arrs["u"].T + arrs["bias_out"]
        np.testing.assert_allclose(g(p, x, y), mlp, atol=1e-12)

    def test_worked_example(self):
        p = AbmParams.from_arrays(u=[[1.0]], a=[[1.0], [0.0]], b=[[0.0], [1.0]])
        np.testing.assert_array_equal(g(p, [3.0, 5.0], [2.0, 7.0]), [21.0])

    @given(st.floats(-4, 4), st.integers(0, 10_000))
    def test_bilinearity(self, alpha, seed):
        r = np.random.default_rng(seed)
        p = rand_params(r, 3, 4, 2, 5, activation="none", biases=False)
        x1, x2, y = r.standard_normal(3), r.standard_normal(3), r.standard_normal(4)
        np.testing.assert_allclose(g(p, alpha * x1, y), alpha * g(p, x1, y), atol=1e-10)
        np.testing.assert_allclose(g(p, x1 + x2, y), g(p, x1, y) + g(p, x2, y), atol=1e-10)
        np.testing.assert_allclose(g(p, x1, alpha * y), alpha * g(p, x1, y), atol=1e-10)

    def test_activation_after_product(self):
        # both projections negative: the product is positive, so relu keeps it
        p = AbmParams.from_arrays(u=[[1.0]], a=[[1.0]], b=[[1.0]], activation="relu")
        np.testing.assert_array_equal(g(p, [-2.0], [-3.0]), [6.0])

    def test_shape_mismatch(self, rng):
        p = rand_params(rng, 3, 3, 2, 2)
        with pytest.raises(DimensionError):
            g(p, np.zeros(4), np.zeros(3))

    def test_leading_axes(self, rng):
        p = rand_params(rng, 3, 3, 2, 4)
        x = rng.standard_normal((2, 5, 3))
        out = g(p, x, x)
        assert out.shape == (2, 5, 2)
        np.testing.assert_allclose(out[1, 3], g(p, x[1, 3], x[1, 3]), atol=1e-14)


class TestTemporalVariants:
    def test_s_constant_sequence(self, rng):
        p = rand_params(rng, 3, 3, 2, 4)
        c = rng.standard_normal(3)
        out = abm.abm_s_forward(p, Tensor(np.tile(c, (5, 1)))).data
        np.testing.assert_allclose(out, np.tile(g(p, c, c), (5, 1)), atol=1e-14)

    def test_s_single_frame(self, rng):
        p = rand_params(rng, 3, 3, 2, 4)
        x = rng.standard_normal((1, 3))
        np.testing.assert_allclose(abm.abm_s_forward(p, Tensor(x)).data[0], g(p, x[0], x[0]), atol=1e-14)

    def test_s_per_step_oracle(self, rng):
        p = rand_params(rng, 3, 3, 2, 4)
        x = rng.standard_normal((3, 3))
        out = abm.abm_s_forward(p, Tensor(x)).data
        for t in range(3):
            np.testing.assert_allclose(out[t], g(p, x[t], x[min(t + 1, 2)]), atol=1e-14)

    def test_c_constant_sequence(self, rng):
        p = rand_params(rng, 12, 12, 3, 5)
        out = abm.abm_c_forward(p, Tensor(np.tile(rng.standard_normal(4), (6, 1)))).data
        np.testing.assert_allclose(out, np.tile(out[0], (6, 1)), atol=1e-14)

    def test_c_matches_naive_bilinear(self, rng):
        C, T = 2, 4
        W = rng.standard_normal((2, 3 * C, 3 * C))
        p = abm.factorize_exact(W)
        x = rng.standard_normal((T, C))
        out = abm.abm_c_forward(p, Tensor(x)).data
        for t in range(T):
            xc = np.concatenate([x[max(t - 1, 0)], x[t], x[min(t + 1, T - 1)]])
            np.testing.assert_allclose(out[t], abm.naive_bilinear(W, xc, xc).data, atol=1e-12)

    def test_c_width_mismatch(self, rng):
        with pytest.raises(DimensionError):
            abm.abm_c_forward(rand_params(rng, 8, 8, 2, 2), Tensor(np.zeros((3, 4))))

    def test_c_gradient(self):
        f, points = case_problem("C", 0)
        assert tn.grad_check(f, points) < 1e-4

    @pytest.mark.parametrize("beta,static,dynamic", [(0, 4, 0), (1, 0, 4), (0.5, 2, 2)])
    def test_split_static_dynamic(self, rng, beta, static, dynamic):
        x = rng.standard_normal((3, 4))
        s, d = abm.split_static_dynamic(Tensor(x), beta)
        assert s.shape == (3, static) and d.shape == (3, dynamic)
        assert np.array_equal(tn.concat([s, d], 1).data, x)

    def test_split_half_takes_trailing_channels(self):
        x = np.arange(4.0)[None, :]
        _, d = abm.split_static_dynamic(Tensor(x), 0.5)
        np.testing.assert_array_equal(d.data, [[2.0, 3.0]])

    def test_a_beta_zero_is_frame_local(self, rng):
        p = rand_params(rng, 4, 4, 3, 5)
        x = rng.standard_normal((5, 4))
        y = x.copy()
        y[[0, 1, 3, 4]] = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(abm.abm_a_forward(p, Tensor(x), 0).data[2],
                                      abm.abm_a_forward(p, Tensor(y), 0).data[2])

    def test_a_per_step_oracle(self, rng):
        C, T, beta = 4, 3, 0.5
        p = rand_params(rng, C + 4, C + 4, 3, 5)
        x = rng.standard_normal((T, C))
        out = abm.abm_a_forward(p, Tensor(x), beta).data
        for t in range(T):
            xa = np.concatenate([x[t], x[max(t - 1, 0), 2:], x[min(t + 1, T - 1), 2:]])
            np.testing.assert_allclose(out[t], g(p, xa, xa), atol=1e-14)

    def test_a_width_mismatch(self, rng):
        with pytest.raises(DimensionError):
            abm.abm_a_forward(rand_params(rng, 5, 5, 2, 2), Tensor(np.zeros((3, 4))), 0.5)

    def test_channel_map_is_permutation_at_beta_one(self):
        Q = abm.abm_a_channel_map(4, 1.0)
        assert sorted(Q.tolist()) == list(range(12))
        assert Q.tolist() == [4, 5, 6, 7, 0, 1, 2, 3, 8, 9, 10, 11]

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
    def test_a_beta_one_equals_c(self, T, C, seed):
        r = np.random.default_rng(seed)
        p = rand_params(r, 3 * C, 3 * C, 3, 4)
        x = r.standard_normal((T, C))
        a_out = abm.abm_a_forward(p, Tensor(x), 1.0).data
        c_out = abm.abm_c_forward(abm.a_params_as_c(p, C, 1.0), Tensor(x)).data
        np.testing.assert_allclose(a_out, c_out, atol=1e-12, rtol=0)

    @given(st.sampled_from([0.25, 0.5]), st.integers(0, 10_000))
    def test_a_embeds_in_c_for_any_beta(self, beta, seed):
        r = np.random.default_rng(seed)
        C = 4
        w = C + 2 * abm.dynamic_channels(beta, C)
        p = rand_params(r, w, w, 3, 4)
        x = r.standard_normal((5, C))
        np.testing.assert_allclose(abm.abm_a_forward(p, Tensor(x), beta).data,
                                   abm.abm_c_forward(abm.a_params_as_c(p, C, beta), Tensor(x)).data, atol=1e-12)

    @pytest.mark.parametrize("spec", [VariantSpec("G"), VariantSpec("S"), VariantSpec("C"),
                                      VariantSpec("A", beta=0.25), VariantSpec("A", beta=0.5),
                                      VariantSpec("A", beta=1.0)])
    def test_constant_in_constant_out(self, rng, spec):
        w = spec.input_width(4)
        p = rand_params(rng, w, w, 3, 5)
        out = abm.layer_forward(spec, p, Tensor(np.tile(rng.standard_normal(4), (2, 6, 1)))).data
        np.testing.assert_allclose(out, np.broadcast_to(out[:, :1], out.shape), atol=1e-14)

    def test_param_count_ordering(self, rng):
        C, D, R = 8, 6, 5
        counts = [rand_params(rng, VariantSpec("A", beta=b).input_width(C), VariantSpec("A", beta=b).input_width(C),
                              D, R).param_count() for b in (0.25, 0.5)]
        w = VariantSpec("C").input_width(C)
        counts.append(rand_params(rng, w, w, D, R).param_count())
        assert counts[0] < counts[1] < counts[2]


class TestStack:
    def test_single_layer_equals_variant(self, rng):
        spec = VariantSpec("C")
        s = abm.build_top_stack(spec, 4, 1, rng=rng, D=3)
        x = Tensor(rng.standard_normal((6, 4)))
        np.testing.assert_array_equal(abm.stack_forward(s, x).data, abm.abm_c_forward(s.layers[0][1], x).data)

    def test_receptive_field_three_layers(self, rng):
        s = abm.build_top_stack(VariantSpec("C"), 4, 3, rng=rng, D=4)
        assert abm.receptive_field(s) == 7
        x = rng.standard_normal((12, 4))
        t = 6
        base = abm.stack_forward(s, Tensor(x)).data[t]
        for far in (t - 4, t + 4):
            y = x.copy()
            y[far] += 10 * rng.standard_normal(4)
            np.testing.assert_array_equal(abm.stack_forward(s, Tensor(y)).data[t], base)
        y = x.copy()
        y[t + 3] += 10.0
        assert not np.allclose(abm.stack_forward(s, Tensor(y)).data[t], base)

    def test_broken_chaining_fails_at_construction(self, rng):
        spec = VariantSpec("C")
        p1 = rand_params(rng, 12, 12, 5, 3)
        p2 = rand_params(rng, 12, 12, 4, 3)
        with pytest.raises(DimensionError):
            AbmStack([(spec, p1), (spec, p2)])

    def test_pool_placement_rules(self, rng):
        s = abm.build_top_stack(VariantSpec("C"), 4, 2, rng=rng, D=4)
        with pytest.raises(ValueError):
            AbmStack(s.layers, "top", temporal_pool_after=0)
        pooled = AbmStack(s.layers, "implanted", temporal_pool_after=0)
        assert abm.stack_forward(pooled, Tensor(rng.standard_normal((6, 4)))).shape == (3, 4)

    def test_classify_averages_per_frame_logits(self, rng):
        s = abm.build_top_stack(VariantSpec("C"), 4, 2, rng=rng, D=3)
        head = Linear.random(3, 5, rng=rng)
        x = Tensor(rng.standard_normal((2, 6, 4)))
        z = abm.stack_forward(s, x)
        np.testing.assert_allclose(abm.classify(s, x, head).data, head(z).data.mean(axis=1), atol=1e-14)

    def test_stack_gradient(self):
        f, points = case_problem("stack3", 3)
        assert tn.grad_check(f, points) < 1e-4

    def test_serialization_round_trip(self, rng):
        s = abm.build_top_stack(VariantSpec("A", beta=0.5), 4, 2, rng=rng, D=4)
        arrays = {k: v.data for k, v in s.parameters().items()}
        back = AbmStack.from_dict(s.to_dict(), arrays)
        x = Tensor(rng.standard_normal((5, 4)))
        np.testing.assert_array_equal(abm.stack_forward(back, x).data, abm.stack_forward(s, x).data)
