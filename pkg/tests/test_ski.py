import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipgp.errors import DimensionError, OutOfRangeError
from skipgp.kernels import KernelSpec, kernel_matrix
from skipgp.ski import (Grid1D, build_grid, interpolation_weights, keys_kernel,
                        ski_cross_covariance, ski_operator, ski_prior_variance)

RBF1 = KernelSpec("RBF", (1.0,))


def ski_error(n, m, seed=0):
    x = np.random.default_rng(seed).uniform(0, 10, n)
    op = ski_operator(RBF1, x, m=m)
    return np.max(np.abs(op.to_dense() - kernel_matrix(RBF1, x[:, None], x[:, None])))


class TestGrid:
    def test_two_cell_padding(self):
        g = build_grid([0.0, 1.0], m=8)
        h = g.spacing
        assert g.lower == pytest.approx(-2 * h) and g.upper == pytest.approx(1 + 2 * h)

    def test_small_grid_pads_one_cell(self):
        # four nodes cannot hold two padding cells per side plus data
        g = build_grid([0.0, 1.0], m=4)
        assert g.lower < 0.0 and g.upper > 1.0
        assert g.covers([0.0, 1.0])
        assert g.lower == pytest.approx(-g.spacing)

    def test_degenerate_values(self):
        g = build_grid([5.0], m=4)
        assert (g.lower, g.upper) == (4.5, 5.5)
        assert g.covers([5.0])

    def test_uniform_points_strictly_inside(self):
        x = np.random.default_rng(0).uniform(0, 10, 100)
        g = build_grid(x, 50)
        nodes = g.nodes
        assert np.all(x > nodes[1]) and np.all(x < nodes[-2])

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_grid([], 10)
        with pytest.raises(ValueError):
            build_grid([1.0, 2.0], 3)
        with pytest.raises(ValueError):
            Grid1D(1.0, 0.0, 10)


class TestWeights:
    grid = Grid1D(0.0, 9.0, 10)

    def test_on_node(self):
        W = interpolation_weights([4.0], self.grid)
        dense = W.to_dense()[0]
        expected = np.zeros(10)
        expected[4] = 1.0
        np.testing.assert_allclose(dense, expected, atol=1e-15)

    def test_cell_midpoint(self):
        W = interpolation_weights([4.5], self.grid)
        np.testing.assert_allclose(W.weights[0], [-1 / 16, 9 / 16, 9 / 16, -1 / 16], atol=1e-15)
        np.testing.assert_array_equal(W.indices[0], [3, 4, 5, 6])

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1.0, 8.0))
    def test_partition_of_unity(self, x):
        W = interpolation_weights([x], self.grid)
        assert abs(W.weights.sum() - 1.0) <= 1e-12
        assert W.indices.min() >= 0 and W.indices.max() < 10

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1.0, 8.0))
    def test_reproduces_linear_functions(self, x):
        W = interpolation_weights([x], self.grid)
        assert W.apply(self.grid.nodes)[0] == pytest.approx(x, abs=1e-12)

    def test_out_of_range_names_index(self):
        with pytest.raises(OutOfRangeError) as info:
            interpolation_weights([2.0, 3.0, 0.5, 9.0], self.grid)
        assert info.value.index == 2

    def test_keys_kernel_values(self):
        np.testing.assert_allclose(keys_kernel([0.0, 1.0, 2.0, 0.5, 1.5]),
                                   [1.0, 0.0, 0.0, 9 / 16, -1 / 16], atol=1e-15)


class TestSkiOperator:
    def test_entrywise_error_at_m400(self):
        assert ski_error(200, 400) <= 1e-3

    def test_error_decreases_as_m_doubles(self):
        errs = [ski_error(200, m) for m in (50, 100, 200, 400)]
        assert all(b < a for a, b in zip(errs, errs[1:])), errs

    def test_zero_vector(self):
        op = ski_operator(RBF1, np.linspace(0, 1, 30), m=20)
        np.testing.assert_array_equal(op.apply(np.zeros(30)), np.zeros(30))

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        op = ski_operator(KernelSpec("Matern52", (0.5,), 2.0), rng.uniform(-2, 2, 80), m=64)
        u, v = rng.standard_normal(80), rng.standard_normal(80)
        assert abs(u @ op.apply(v) - v @ op.apply(u)) <= 1e-8 * np.linalg.norm(u) * np.linalg.norm(v)

    @pytest.mark.parametrize("n,m", [(40, 16), (256, 256), (100, 37)])
    def test_fast_path_matches_dense_factors(self, n, m):
        rng = np.random.default_rng(n + m)
        op = ski_operator(RBF1, rng.uniform(0, 5, n), m=m)
        v = rng.standard_normal(n)
        Wd = op.W.to_dense()
        ref = Wd @ (op.kuu.to_dense() @ (Wd.T @ v))
        assert np.linalg.norm(op.apply(v) - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_cost_linear_in_n(self):
        ops = [ski_operator(RBF1, np.random.default_rng(n).uniform(0, 1, n), m=64)
               for n in (1000, 2000)]
        for op in ops:
            op.apply(np.ones(op.size))
        small, large = (op.flops for op in ops)
        grid_part = ops[0].cost_per_apply() - 2 * ops[0].W.nnz
        assert large - grid_part == 2 * (small - grid_part)

    def test_multidimensional_component_rejected(self):
        with pytest.raises(DimensionError):
            ski_operator(KernelSpec("RBF", (1.0, 1.0)), np.zeros(5))

    def test_cross_covariance_and_prior_variance(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 10, 150)
        op = ski_operator(RBF1, x, m=300)
        xs = rng.uniform(1, 9, 20)
        exact = kernel_matrix(RBF1, xs[:, None], x[:, None])
        assert np.max(np.abs(ski_cross_covariance(op, xs) - exact)) <= 1e-3
        np.testing.assert_allclose(ski_prior_variance(op, xs), 1.0, atol=1e-3)
