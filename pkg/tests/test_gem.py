import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_covariance, brute_gem, brute_means, brute_top_k
from pyramnet import gradcheck
from pyramnet import tensor as T
from pyramnet.errors import ConfigError, DataError
from pyramnet.gem import (
    attribute_means,
    choose_k,
    clamp_k,
    covariance_matrix,
    gem_forward,
    top_k_select,
)


def f64(a):
    return T.Tensor(np.asarray(a, dtype=np.float64))


def random_gem_inputs(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 7))
        f = int(rng.integers(1, 6))
        yield rng.standard_normal((n, f))


class TestAttributeMeans:
    def test_zero_rows(self):
        np.testing.assert_array_equal(attribute_means(np.zeros((3, 4))), np.zeros(3))

    def test_hand_row(self):
        assert attribute_means(np.array([[1.0, 2.0, 3.0]]))[0] == 2.0

    def test_matches_summation_oracle(self, rng):
        x = rng.standard_normal((5, 8))
        np.testing.assert_allclose(attribute_means(x), brute_means(x), atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            attribute_means(np.array([[1.0, np.inf]]))


class TestCovarianceMatrix:
    def test_single_attribute_is_zero(self, rng):
        np.testing.assert_array_equal(covariance_matrix(f64(rng.standard_normal((4, 1)))).data, 0.0)

    def test_identical_rows_give_constant_variance(self):
        row = np.array([1.0, 4.0, -2.0, 0.5])
        s = covariance_matrix(f64(np.tile(row, (5, 1)))).data
        np.testing.assert_allclose(s, np.full((5, 5), row.var()))

    def test_hand_matrix_matches_double_loop(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        s = covariance_matrix(f64(x)).data
        np.testing.assert_allclose(s, brute_covariance(x), atol=1e-12)
        assert s[0, 1] < 0

    def test_symmetric_with_nonnegative_diagonal(self, rng):
        for _ in range(20):
            s = covariance_matrix(f64(rng.standard_normal((7, 5)))).data
            assert np.max(np.abs(s - s.T)) < 1e-6
            assert np.all(np.diag(s) >= 0)

    def test_correlation_has_unit_diagonal(self, rng):
        s = covariance_matrix(f64(rng.standard_normal((6, 5))), correlation=True).data
        np.testing.assert_allclose(np.diag(s), 1.0)
        assert np.all(np.abs(s) <= 1 + 1e-12)

    def test_gradient(self, rng, f64):
        fn, inputs, _ = gradcheck._op_covariance(rng)
        assert gradcheck.check_function(fn, inputs, rng) < 1e-4


class TestTopK:
    def test_hand_matrix(self):
        s = np.array([[0.0, 3.0, 1.0], [3.0, 0.0, 2.0], [1.0, 2.0, 0.0]])
        adj = top_k_select(s, 1)
        np.testing.assert_array_equal(adj.indices[:, 0], [1, 0, 1])

    def test_tie_goes_to_smaller_column(self):
        s = np.zeros((8, 8))
        s[0, 4] = s[0, 7] = 2.0
        assert top_k_select(s, 1).indices[0, 0] == 4

    def test_k_n_minus_one_selects_all_others(self, rng):
        s = rng.standard_normal((5, 5))
        adj = top_k_select(s, 4)
        for i in range(5):
            assert sorted(adj.indices[i]) == [j for j in range(5) if j != i]

    @pytest.mark.parametrize("k", [0, 5, 9])
    def test_k_out_of_range(self, k):
        with pytest.raises(ConfigError):
            top_k_select(np.zeros((5, 5)), k)

    def test_invariants_on_random_matrices(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 12))
            k = int(rng.integers(1, n))
            s = np.round(rng.standard_normal((n, n)), 1)  # coarse values force ties
            adj = top_k_select(s, k)
            np.testing.assert_array_equal(adj.indices, brute_top_k(s, k))
            for i in range(n):
                row = adj.indices[i]
                assert i not in row and len(set(row)) == k
                assert np.all(np.diff(adj.scores[i]) <= 0)

    def test_batched_rows_are_independent(self, rng):
        s = rng.standard_normal((3, 6, 6))
        adj = top_k_select(s, 2)
        for b in range(3):
            np.testing.assert_array_equal(adj.indices[b], top_k_select(s[b], 2).indices)


class TestChooseK:
    @pytest.mark.parametrize("f,k", [(32, 8), (544, 136), (4, 1), (1, 1), (5, 2)])
    def test_ceiling_rule(self, f, k):
        assert choose_k(f) == k

    def test_fixed_override(self):
        assert choose_k(544, fixed=20) == 20

    def test_clamp(self):
        assert clamp_k(136, 10) == 9
        assert clamp_k(3, 10) == 3


class TestGemForward:
    def test_identical_rows_concat_with_self(self, rng):
        row = rng.standard_normal(6)
        x = np.tile(row, (5, 1))
        out = gem_forward(f64(x)).data
        np.testing.assert_allclose(out, np.concatenate([x, x], axis=1))

    def test_hand_input_matches_oracle(self):
        x = np.array([[1.0, 2.0, 0.0, -1.0], [0.5, 0.0, 1.0, 2.0], [2.0, 1.0, 0.0, -2.0]])
        out = gem_forward(f64(x)).data
        expected, _ = brute_gem(x)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_shape_contract(self, rng):
        x = T.Tensor(rng.standard_normal((2, 16, 1, 32)))
        assert gem_forward(x).shape == (2, 16, 1, 64)

    def test_flat_layout(self, rng):
        assert gem_forward(T.Tensor(rng.standard_normal((10, 5)))).shape == (10, 10)

    def test_single_point_rejected(self):
        with pytest.raises(DataError):
            gem_forward(T.Tensor(np.ones((1, 4))))

    def test_k_clamped_when_too_large(self, caplog):
        x = T.Tensor(np.random.default_rng(0).standard_normal((4, 32)))
        _, adj = gem_forward(x, return_adjacency=True)
        assert adj.k == 3

    def test_oracle_equivalence_small_inputs(self):
        for x in random_gem_inputs(100):
            out, adj = gem_forward(f64(x), return_adjacency=True)
            expected, idx = brute_gem(x)
            np.testing.assert_allclose(out.data, expected, atol=1e-6)
            np.testing.assert_array_equal(adj.indices, idx)

    def test_scale_keeps_selection(self, rng):
        x = rng.standard_normal((9, 6))
        _, a = gem_forward(f64(x), return_adjacency=True)
        _, b = gem_forward(f64(3.7 * x), return_adjacency=True)
        np.testing.assert_array_equal(a.indices, b.indices)
        s1 = covariance_matrix(f64(x)).data
        s2 = covariance_matrix(f64(3.7 * x)).data
        np.testing.assert_allclose(s2, 3.7**2 * s1)

    def test_permutation_equivariance(self, rng):
        for _ in range(100):
            n, f = int(rng.integers(3, 12)), int(rng.integers(2, 9))
            x = rng.standard_normal((n, f))
            perm = rng.permutation(n)
            out, adj = gem_forward(f64(x), return_adjacency=True)
            pout, padj = gem_forward(f64(x[perm]), return_adjacency=True)
            np.testing.assert_allclose(pout.data, out.data[perm], atol=1e-9)
            # selected sets map through the permutation
            for new_i, old_i in enumerate(perm):
                assert {int(perm[j]) for j in padj.indices[new_i]} == {int(j) for j in adj.indices[old_i]}

    def test_samples_are_independent(self, rng):
        x = rng.standard_normal((3, 7, 5))
        batched = gem_forward(f64(x)).data
        for b in range(3):
            np.testing.assert_allclose(batched[b], gem_forward(f64(x[b])).data)

    def test_frozen_adjacency_reused(self, rng):
        x = f64(rng.standard_normal((6, 4)))
        _, adj = gem_forward(x, return_adjacency=True)
        y = f64(rng.standard_normal((6, 4)))
        out = gem_forward(y, adjacency=adj).data
        np.testing.assert_allclose(out[:, 4:], y.data[adj.indices].mean(axis=1))

    def test_gradient_with_frozen_selection(self, rng, f64):
        fn, inputs, _ = gradcheck._op_gem(rng)
        assert gradcheck.check_function(fn, inputs, rng) < 1e-4


@settings(max_examples=80, deadline=None)
@given(
    st.integers(2, 6).flatmap(
        lambda n: st.sampled_from([1, 2, 4]).flatmap(
            lambda f: arrays(np.float64, (n, f), elements=st.integers(-3, 3).map(float))
        )
    )
)
def test_gem_matches_oracle_including_ties(x):
    # small integers with F a power of two keep every covariance exact, so ties are real ties
    out, adj = gem_forward(f64(x), return_adjacency=True)
    expected, idx = brute_gem(x)
    np.testing.assert_array_equal(adj.indices, idx)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)
