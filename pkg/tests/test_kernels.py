import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skipgp.errors import UnsupportedDecompositionError
from skipgp.kernels import (KernelSpec, ProductKernelSpec, decompose_product, kernel_diag,
                            kernel_eval, kernel_matrix)


class TestKernelEval:
    def test_rbf_at_zero_distance(self):
        assert kernel_eval(KernelSpec("RBF", (0.7,), 2.5), [1.0], [1.0]) == pytest.approx(2.5)

    def test_rbf_closed_form(self):
        k = kernel_eval(KernelSpec("RBF", (1.0,)), [0.0, 0.0], [1.0, 1.0])
        assert k == pytest.approx(np.exp(-1.0), abs=1e-12)
        assert k == pytest.approx(0.367879, abs=1e-6)

    def test_matern_at_zero_distance(self):
        assert kernel_eval(KernelSpec("Matern52", (0.3,), 1.7), [4.0], [4.0]) == pytest.approx(1.7)

    def test_matern_closed_form(self):
        t = 0.8
        expected = 3.0 * (1 + np.sqrt(5) * t + 5 * t**2 / 3) * np.exp(-np.sqrt(5) * t)
        assert kernel_eval(KernelSpec("Matern52", (2.0,), 3.0), [0.0], [1.6]) == pytest.approx(expected)

    def test_ard_scaling(self):
        spec = KernelSpec("RBF", (1.0, 2.0))
        assert kernel_eval(spec, [0.0, 0.0], [1.0, 2.0]) == pytest.approx(np.exp(-1.0))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.lists(st.floats(-5, 5), min_size=3, max_size=3),
           st.floats(-1e3, 1e3), st.sampled_from(["RBF", "Matern52"]))
    def test_stationarity(self, x, z, c, family):
        spec = KernelSpec(family, (0.8, 1.3, 2.0), 1.5)
        x, z = np.array(x), np.array(z)
        assert abs(kernel_eval(spec, x, z) - kernel_eval(spec, x + c, z + c)) <= 1e-12

    def test_active_dimension(self):
        spec = KernelSpec("RBF", (1.0,), active_dimension=1)
        assert kernel_eval(spec, [100.0, 0.0], [-100.0, 1.0]) == pytest.approx(np.exp(-0.5))

    @pytest.mark.parametrize("bad", [dict(lengthscales=(0.0,)), dict(lengthscales=(-1.0,)),
                                     dict(lengthscales=(1.0,), outputscale=0.0),
                                     dict(family="Cosine", lengthscales=(1.0,))])
    def test_invalid_specs(self, bad):
        args = {"family": "RBF", **bad}
        with pytest.raises(ValueError):
            KernelSpec(**args)

    def test_roundtrip(self):
        spec = KernelSpec("Matern52", (0.5, 2.0), 3.0)
        assert KernelSpec.from_dict(spec.to_dict()) == spec
        prod = decompose_product(KernelSpec("RBF", (1.0, 2.0), 3.0))
        assert ProductKernelSpec.from_dict(prod.to_dict()) == prod


class TestKernelMatrix:
    def test_single_point(self):
        np.testing.assert_allclose(kernel_matrix(KernelSpec("RBF", (1.0,), 4.0), [[0.3]], [[0.3]]),
                                   [[4.0]])

    @pytest.mark.parametrize("family", ["RBF", "Matern52"])
    def test_symmetric_psd(self, family):
        X = np.random.default_rng(0).standard_normal((50, 3))
        K = kernel_matrix(KernelSpec(family, (1.0, 0.5, 2.0), 1.3), X, X)
        assert np.max(np.abs(K - K.T)) <= 1e-14
        assert np.linalg.eigvalsh(K + 1e-6 * np.eye(50)).min() > 0

    def test_entries_match_eval(self):
        rng = np.random.default_rng(1)
        X, Z = rng.standard_normal((6, 2)), rng.standard_normal((4, 2))
        spec = KernelSpec("Matern52", (0.7, 1.1), 2.0)
        K = kernel_matrix(spec, X, Z)
        for i in range(6):
            for j in range(4):
                assert K[i, j] == pytest.approx(kernel_eval(spec, X[i], Z[j]), abs=1e-14)

    def test_diag(self):
        np.testing.assert_array_equal(kernel_diag(KernelSpec("RBF", (1.0,), 2.0), np.zeros((3, 1))),
                                      [2.0, 2.0, 2.0])


class TestDecompose:
    def test_one_dimensional(self):
        spec = KernelSpec("RBF", (0.9,), 1.4)
        prod = decompose_product(spec, 1)
        assert len(prod) == 1
        X = np.random.default_rng(2).standard_normal((10, 1))
        np.testing.assert_allclose(kernel_matrix(prod, X, X), kernel_matrix(spec, X, X), atol=1e-15)

    def test_ard_product_matches_direct(self):
        rng = np.random.default_rng(3)
        spec = KernelSpec("RBF", (0.5, 1.0, 2.0), 1.7)
        prod = decompose_product(spec)
        X, Z = rng.standard_normal((100, 3)), rng.standard_normal((100, 3))
        direct = np.array([kernel_eval(spec, x, z) for x, z in zip(X, Z)])
        parts = np.prod([[kernel_eval(c, x, z) for c in prod.components] for x, z in zip(X, Z)],
                        axis=1)
        assert np.max(np.abs(parts - direct) / direct) <= 1e-12

    def test_outputscale_convention(self):
        prod = decompose_product(KernelSpec("RBF", (1.0, 1.0), 4.0))
        assert np.prod([c.outputscale for c in prod.components]) == pytest.approx(4.0)
        assert [c.outputscale for c in prod.components] == [4.0, 1.0]

    def test_shared_lengthscale_broadcasts(self):
        prod = decompose_product(KernelSpec("RBF", (0.6,)), d=3)
        assert [c.lengthscales for c in prod.components] == [(0.6,)] * 3
        assert [c.active_dimension for c in prod.components] == [0, 1, 2]

    def test_matern_does_not_factor(self):
        with pytest.raises(UnsupportedDecompositionError):
            decompose_product(KernelSpec("Matern52", (1.0, 1.0)))

    def test_overlapping_components_rejected(self):
        c = KernelSpec("RBF", (1.0,), active_dimension=0)
        with pytest.raises(ValueError):
            ProductKernelSpec((c, c))
