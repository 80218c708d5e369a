import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid

from ejdke.kernel import (
    ProductKernel,
    build_kernel,
    check_bandwidth,
    convolve_1d,
    convolve_kernels,
    kernel_moments,
)

ORDERS = [0, 1, 2, 3, 5]


def _even_kernel_by_moments(M):
    """Even polynomial on [-1, 1] solving the moment system directly."""
    degs = np.arange(0, 2 * (M // 2) + 1, 2)
    # int_{-1}^{1} x^(i+j) dx for even i + j
    A = np.array([[2.0 / (i + j + 1) if (i + j) % 2 == 0 else 0.0 for j in degs] for i in degs])
    rhs = np.zeros(len(degs))
    rhs[0] = 1.0
    c = np.linalg.solve(A, rhs)
    out = np.zeros(degs[-1] + 1)
    out[degs] = c
    return out


class TestBuildKernel:
    @pytest.mark.parametrize("M", ORDERS)
    def test_moments_by_quadrature(self, M):
        mom = kernel_moments(build_kernel(M), max(M, 1))
        assert abs(mom[0] - 1.0) < 1e-10
        assert np.all(np.abs(mom[1 : M + 1]) < 1e-8)

    @pytest.mark.parametrize("M", ORDERS)
    def test_exact_moments(self, M):
        K = build_kernel(M)
        assert K.moment(0) == pytest.approx(1.0, abs=1e-14)
        for l in range(1, M + 1):
            assert abs(K.moment(l)) < 1e-14

    @pytest.mark.parametrize("M", ORDERS)
    def test_matches_moment_system(self, M):
        K = build_kernel(M)
        ref = _even_kernel_by_moments(M)
        np.testing.assert_allclose(K.coeffs, ref, atol=1e-12)

    def test_box_kernel(self):
        for M in (0, 1):
            K = build_kernel(M)
            np.testing.assert_allclose(K(np.linspace(-1, 1, 11)), 0.5)

    def test_order_two_closed_form(self):
        x = np.linspace(-1, 1, 41)
        np.testing.assert_allclose(build_kernel(2)(x), 9 / 8 - 15 / 8 * x**2, atol=1e-14)

    def test_negative_values_from_order_two(self):
        x = np.linspace(-1, 1, 2001)
        assert build_kernel(1)(x).min() >= 0
        for M in (2, 3, 5):
            assert build_kernel(M)(x).min() < 0

    @pytest.mark.parametrize("M", ORDERS)
    def test_zero_outside_support(self, M):
        K = build_kernel(M)
        x = np.array([-5.0, -1.0 - 1e-12, 1.0 + 1e-12, 3.0])
        assert np.all(K(x) == 0.0)

    def test_even(self):
        K = build_kernel(5)
        x = np.linspace(0, 1, 17)
        np.testing.assert_array_equal(K(x), K(-x))

    def test_sup_norm(self):
        x = np.linspace(-1, 1, 200001)
        for M in ORDERS:
            K = build_kernel(M)
            assert K.sup_norm == pytest.approx(np.abs(K(x)).max(), rel=1e-9)

    def test_total_variation_order_two(self):
        # 9/8 at 0, -3/4 at +-1: rises 15/8 twice, plus the jumps of 3/4
        assert build_kernel(2).total_variation == pytest.approx(2 * 15 / 8 + 2 * 3 / 4, abs=1e-12)

    def test_l1_norm_matches_quadrature(self):
        for M in ORDERS:
            K = build_kernel(M)
            x = np.linspace(-1, 1, 400001)
            y = np.abs(K(x))
            assert K.l1_norm == pytest.approx(trapezoid(y, x), abs=1e-8)

    def test_negative_order(self):
        with pytest.raises(ValueError):
            build_kernel(-1)

    def test_json_roundtrip(self, tmp_path):
        import json

        K = build_kernel(3)
        K.to_json(tmp_path / "k.json")
        d = json.loads((tmp_path / "k.json").read_text())
        assert d["order"] == 3
        np.testing.assert_array_equal(d["coeffs"], K.coeffs)


class TestProductKernel:
    def test_value_is_product(self, rng):
        K = build_kernel(3)
        h = np.array([0.3, 0.7, 1.0])
        pk = ProductKernel(K, h)
        y = rng.uniform(-1, 1, size=(50, 3))
        ref = np.prod(K(y / h) / h, axis=1)
        np.testing.assert_allclose(pk(y), ref, rtol=1e-14)

    def test_sup_norm_bound(self, rng):
        K = build_kernel(5)
        h = np.array([0.2, 0.5])
        pk = ProductKernel(K, h)
        y = rng.uniform(-0.6, 0.6, size=(20000, 2))
        assert np.abs(pk(y)).max() <= pk.sup_norm * (1 + 1e-12)

    @given(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3))
    @settings(max_examples=25, deadline=None)
    def test_l1_norm_scale_invariant(self, h):
        K = build_kernel(2)
        h = np.asarray(h)
        # per-axis integral of |K_h| by the exact piecewise formula on [-h, h]
        x = np.linspace(-1, 1, 200001)
        per_axis = [trapezoid(np.abs(K.scaled(hl * x, hl)), hl * x) for hl in h]
        assert np.prod(per_axis) == pytest.approx(ProductKernel(K, h).l1_norm, abs=1e-8)
        assert ProductKernel(K, h).l1_norm == pytest.approx(K.l1_norm ** len(h), abs=1e-10)

    @pytest.mark.parametrize("bad", [[0.0], [-0.1], [1.5], [np.nan]])
    def test_rejects_bad_bandwidth(self, bad):
        with pytest.raises(ValueError):
            check_bandwidth(bad)


class TestConvolution:
    @given(
        st.floats(0.05, 1.0),
        st.floats(0.05, 1.0),
        st.lists(st.floats(-2.5, 2.5), min_size=1, max_size=8),
    )
    @settings(max_examples=60, deadline=None)
    def test_commutative(self, h, eta, x):
        K = build_kernel(3)
        x = np.asarray(x)
        np.testing.assert_allclose(convolve_1d(K, h, eta, x), convolve_1d(K, eta, h, x), atol=1e-12)

    @pytest.mark.parametrize("M", [0, 2, 5])
    def test_unit_integral(self, M):
        K = build_kernel(M)
        h, eta = 0.4, 0.9
        x = np.linspace(-(h + eta), h + eta, 200001)
        total = trapezoid(convolve_1d(K, h, eta, x), x)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_matches_brute_force(self):
        K = build_kernel(2)
        h, eta = 0.3, 0.5
        for x in (-0.7, -0.2, 0.0, 0.35, 0.79):
            lo, hi = max(-eta, x - h), min(eta, x + h)
            ref, _ = quad(lambda u: float(K.scaled(u - x, h) * K.scaled(u, eta)), lo, hi, epsabs=1e-13)
            assert convolve_1d(K, h, eta, np.array(x)) == pytest.approx(ref, abs=1e-11)

    def test_support(self):
        K = build_kernel(2)
        h, eta = 0.3, 0.5
        assert convolve_1d(K, h, eta, np.array([0.8 + 1e-9, -0.81, 2.0])) == pytest.approx([0, 0, 0])
        ck = convolve_kernels(K, [h, 0.2], [eta, 0.2])
        np.testing.assert_allclose(ck.support, [0.8, 0.4])
        assert ck(np.array([[0.0, 0.5]])) == 0.0

    def test_product_form(self, rng):
        K = build_kernel(3)
        h = np.array([0.2, 0.6, 1.0])
        eta = np.array([0.5, 0.5, 0.1])
        ck = convolve_kernels(K, h, eta)
        y = rng.uniform(-1.2, 1.2, size=(30, 3))
        ref = np.prod([convolve_1d(K, h[j], eta[j], y[:, j]) for j in range(3)], axis=0)
        np.testing.assert_allclose(ck(y), ref, rtol=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            convolve_kernels(build_kernel(2), [0.5, 0.5], [0.5])
