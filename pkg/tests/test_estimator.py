import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ejdke.estimator import (
    DensityEstimate,
    EvalGrid,
    covers,
    estimate_density,
    estimate_density_convolved,
    l2_distance_on_A,
    midpoint_mass_bound,
    squared_l2_on_A,
    young_inequality_terms,
)
from ejdke.kernel import build_kernel, convolve_1d
from ejdke.model import DimensionError, build_model
from ejdke.simulate import Trajectory, simulate_path


def naive(traj, kernel, h, grid, eta=None):
    """Double loop over nodes and samples, no vectorisation across either."""
    out = np.zeros(grid.size)
    for i, x in enumerate(grid.nodes()):
        acc = 0.0
        for y in traj.states:
            v = 1.0
            for j in range(grid.dim):
                if eta is None:
                    v *= kernel((y[j] - x[j]) / h[j]) / h[j]
                else:
                    v *= convolve_1d(kernel, h[j], eta[j], np.array(y[j] - x[j]))
            acc += v * traj.dt
        out[i] = acc / traj.T
    return out.reshape(grid.counts)


@pytest.fixture(scope="module")
def path1():
    return simulate_path(build_model("radial-pushback-1"), 10.0, 0.01, seed=1)


@pytest.fixture(scope="module")
def path3():
    return simulate_path(build_model("radial-pushback-3"), 200.0, 0.01, seed=2)


class TestEvalGrid:
    def test_weights_sum_to_volume(self):
        g = EvalGrid([-1, 0, 2], [1, 3, 2.5], (4, 5, 6))
        assert g.weights.sum() == pytest.approx(g.volume, rel=1e-14)
        assert g.volume == pytest.approx(2 * 3 * 0.5)

    def test_nodes_are_midpoints(self):
        g = EvalGrid([0.0], [1.0], (4,))
        np.testing.assert_allclose(g.nodes()[:, 0], [0.125, 0.375, 0.625, 0.875])

    def test_invalid(self):
        with pytest.raises(ValueError):
            EvalGrid([1.0], [0.0], (3,))
        with pytest.raises(ValueError):
            EvalGrid([0.0], [1.0], (0,))
        with pytest.raises(DimensionError):
            EvalGrid([0.0, 0.0], [1.0], (3,))

    def test_padded_keeps_nodes(self):
        g = EvalGrid.cube(2, 1.0, 8)
        p = g.padded(0.3)
        assert np.all(p.lo <= g.lo - 0.3 + 1e-12)
        np.testing.assert_allclose(p.delta, g.delta)
        inner = set(map(tuple, np.round(g.nodes(), 12)))
        assert inner <= set(map(tuple, np.round(p.nodes(), 12)))

    def test_dict_roundtrip(self):
        g = EvalGrid([-1, 0], [1, 2], (3, 4))
        h = EvalGrid.from_dict(json.loads(json.dumps(g.to_dict())))
        assert h.counts == g.counts and np.array_equal(h.lo, g.lo)


class TestEstimate:
    def test_naive_oracle_1d(self, path1, backend):
        K = build_kernel(3)
        grid = EvalGrid([-2.0], [2.0], (100,))
        fast = estimate_density(path1, K, [0.4], grid, backend=backend).values
        assert path1.n_steps == 1000
        np.testing.assert_allclose(fast, naive(path1, K, [0.4], grid), rtol=0, atol=1e-12)

    def test_naive_oracle_2d(self, backend):
        t = simulate_path(build_model("radial-pushback-2"), 10.0, 0.01, seed=3)
        K = build_kernel(2)
        grid = EvalGrid([-2.0, -1.5], [2.0, 1.5], (10, 10))
        h = np.array([0.5, 0.3])
        fast = estimate_density(t, K, h, grid, backend=backend).values
        np.testing.assert_allclose(fast, naive(t, K, h, grid), rtol=0, atol=1e-12)

    def test_naive_oracle_convolved(self, backend):
        t = simulate_path(build_model("radial-pushback-2"), 2.0, 0.01, seed=4)
        K = build_kernel(2)
        grid = EvalGrid([-2.0, -2.0], [2.0, 2.0], (6, 6))
        h, eta = np.array([0.5, 0.25]), np.array([1.0, 0.5])
        fast = estimate_density_convolved(t, K, h, eta, grid, backend=backend).values
        np.testing.assert_allclose(fast, naive(t, K, h, grid, eta), rtol=0, atol=1e-12)

    def test_backends_agree_3d(self, path3):
        pytest.importorskip("numba")
        K = build_kernel(5)
        grid = EvalGrid.cube(3, 1.5, 12)
        h = np.array([0.2, 0.5, 1.0])
        a = estimate_density(path3, K, h, grid, backend="numba").values
        b = estimate_density(path3, K, h, grid, backend="numpy").values
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_four_dimensions(self, backend):
        t = simulate_path(build_model("radial-pushback-4"), 1.0, 0.01, seed=5)
        K = build_kernel(2)
        grid = EvalGrid.cube(4, 1.0, 3)
        h = np.full(4, 0.7)
        np.testing.assert_allclose(
            estimate_density(t, K, h, grid, backend=backend).values, naive(t, K, h, grid), atol=1e-12
        )

    def test_constant_path(self, backend):
        K = build_kernel(2)
        t = Trajectory(1, 0.1, np.full((50, 1), 0.25))
        grid = EvalGrid([0.0], [1.0], (2,))  # nodes at 0.25 and 0.75
        v = estimate_density(t, K, [0.5], grid, backend=backend).values
        assert v[0] == pytest.approx(K(0.0) / 0.5, abs=1e-14)

    def test_constant_path_convolved(self, backend):
        K = build_kernel(2)
        t = Trajectory(2, 0.1, np.full((20, 2), 0.25))
        grid = EvalGrid([0.0, 0.0], [1.0, 1.0], (2, 2))
        v = estimate_density_convolved(t, K, [1.0, 1.0], [1.0, 1.0], grid, backend=backend).values
        kk = convolve_1d(K, 1.0, 1.0, np.array([0.0, 0.5]))
        np.testing.assert_allclose(v, np.outer(kk, kk), atol=1e-14)

    def test_symmetry(self, path3, backend):
        K = build_kernel(3)
        grid = EvalGrid.cube(3, 1.5, 8)
        h, eta = np.array([0.25, 0.5, 1.0]), np.array([1.0, 0.2, 0.5])
        a = estimate_density_convolved(path3, K, h, eta, grid, backend=backend).values
        b = estimate_density_convolved(path3, K, eta, h, grid, backend=backend).values
        assert np.abs(a - b).max() < 1e-12

    def test_mollifier_limit(self, path1):
        K = build_kernel(2)
        grid = EvalGrid([-2.0], [2.0], (200,))
        plain = estimate_density(path1, K, [0.5], grid).values
        gaps = [
            np.abs(estimate_density_convolved(path1, K, [0.5], [eta], grid).values - plain).max()
            for eta in (0.2, 0.1, 0.05, 0.025)
        ]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))

    def test_concatenation_is_weighted_average(self, backend):
        m = build_model("radial-pushback-2")
        a = simulate_path(m, 3.0, 0.01, seed=6)
        b = simulate_path(m, 7.0, 0.01, seed=7)
        K = build_kernel(2)
        grid = EvalGrid.cube(2, 2.0, 9)
        h = [0.4, 0.6]
        ea, eb = (estimate_density(t, K, h, grid, backend=backend).values for t in (a, b))
        ab = estimate_density(a.concat(b), K, h, grid, backend=backend).values
        np.testing.assert_allclose(ab, (3 * ea + 7 * eb) / 10, atol=1e-12)

    def test_kernel_scaling(self, path1, backend):
        K = build_kernel(2)
        K3 = dataclasses.replace(K, coeffs=3.0 * K.coeffs)
        grid = EvalGrid([-2.0], [2.0], (40,))
        a = estimate_density(path1, K, [0.3], grid, backend=backend).values
        b = estimate_density(path1, K3, [0.3], grid, backend=backend).values
        np.testing.assert_allclose(b, 3 * a, rtol=1e-13, atol=1e-15)

    def test_node_partition(self, path3, backend):
        K = build_kernel(2)
        full = EvalGrid.cube(3, 1.5, 10)
        # the first half of axis 0 as its own grid
        part = EvalGrid(full.lo, [0.0, 1.5, 1.5], (5, 10, 10))
        h = [0.5, 0.5, 0.5]
        a = estimate_density(path3, K, h, full, backend=backend).values
        b = estimate_density(path3, K, h, part, backend=backend).values
        np.testing.assert_allclose(a[:5], b, atol=1e-15)

    def test_negative_values_kept(self, path1):
        K = build_kernel(2)
        v = estimate_density(path1, K, [0.1], EvalGrid([-4.0], [4.0], (400,))).values
        assert v.min() < 0
        assert np.all(np.isfinite(v))
        assert v.min() >= -K.sup_norm / 0.1

    @pytest.mark.parametrize("h", [[0.0], [-0.5], [1.2]])
    def test_bad_bandwidth(self, path1, h):
        with pytest.raises(ValueError):
            estimate_density(path1, build_kernel(2), h, EvalGrid([-1.0], [1.0], (4,)))

    def test_dimension_mismatch(self, path1):
        with pytest.raises(DimensionError):
            estimate_density(path1, build_kernel(2), [0.5, 0.5], EvalGrid.cube(2, 1.0, 3))
        with pytest.raises(DimensionError):
            estimate_density(path1, build_kernel(2), [0.5, 0.5], EvalGrid([-1.0], [1.0], (4,)))

    def test_serialisation(self, path1, tmp_path):
        est = estimate_density(path1, build_kernel(2), [0.5], EvalGrid([-1.0], [1.0], (4,)))
        est.save(tmp_path / "e.json", tmp_path / "e.csv")
        meta = json.loads((tmp_path / "e.json").read_text())
        assert meta["provenance"]["seed"] == 1 and meta["h"] == [0.5]
        rows = (tmp_path / "e.csv").read_text().splitlines()
        assert rows[0] == "x1,value" and len(rows) == 5


class TestMass:
    @pytest.mark.parametrize("M", [0, 2, 5])
    def test_mass_within_bound(self, path1, M):
        K = build_kernel(M)
        h = [0.3]
        grid = EvalGrid([-5.0], [5.0], (2000,))
        assert covers(grid, path1.states, h)
        est = estimate_density(path1, K, h, grid).values
        mass = est.sum() * grid.cell_volume
        assert abs(mass - 1.0) <= midpoint_mass_bound(K, h, grid)

    def test_mass_2d(self):
        t = simulate_path(build_model("radial-pushback-2"), 5.0, 0.01, seed=8)
        K = build_kernel(2)
        h = np.array([0.5, 0.4])
        lo, hi = t.states.min(axis=0) - h, t.states.max(axis=0) + h
        grid = EvalGrid(lo, hi, tuple(np.ceil((hi - lo) / 0.005).astype(int)))
        est = estimate_density(t, K, h, grid).values
        bound = midpoint_mass_bound(K, h, grid)
        assert bound < 0.2
        assert abs(est.sum() * grid.cell_volume - 1.0) <= bound


class TestL2:
    def test_identical(self):
        g = EvalGrid.cube(2, 1.0, 5)
        f = np.random.default_rng(0).random(g.counts)
        assert l2_distance_on_A(f, f, g) == 0.0

    def test_unit_difference(self):
        g = EvalGrid([-1, 0], [2, 0.5], (7, 3))
        assert l2_distance_on_A(np.ones(g.counts), np.zeros(g.counts), g) == pytest.approx(np.sqrt(1.5), rel=1e-14)

    def test_against_direct_sum(self, rng):
        g = EvalGrid([-1, 0, 0], [1, 1, 3], (4, 5, 6))
        f, h = rng.standard_normal(g.size), rng.standard_normal(g.size)
        ref = 0.0
        for a, b in zip(f, h):
            ref += g.cell_volume * (a - b) ** 2
        assert l2_distance_on_A(f, h, g) == pytest.approx(np.sqrt(ref), abs=1e-12)
        assert squared_l2_on_A(f, h, g) == pytest.approx(ref, abs=1e-12)

    def test_shape_mismatch(self):
        g = EvalGrid.cube(2, 1.0, 5)
        with pytest.raises(DimensionError):
            l2_distance_on_A(np.zeros(25), np.zeros(24), g)


class TestYoung:
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0, 2, 5]))
    @settings(max_examples=40, deadline=None)
    def test_young_bound(self, seed, M):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        K = build_kernel(M)
        grid = EvalGrid.cube(d, 1.0, 6)
        h = rng.uniform(0.1, 1.0, size=d)
        padded = grid.padded(2 * np.sqrt(d))
        g = rng.standard_normal(padded.size) * rng.random(padded.size) ** 3
        lhs, rhs = young_inequality_terms(K, h, grid, g, padded)
        assert lhs <= rhs + 1e-9

    def test_convolution_is_exact(self):
        # g = 1 on the whole padded box: K_h * g = int K = 1 at interior nodes
        K = build_kernel(3)
        grid = EvalGrid.cube(2, 1.0, 4)
        padded = grid.padded(2.0)
        lhs, _ = young_inequality_terms(K, [0.5, 0.9], grid, np.ones(padded.size), padded)
        assert lhs == pytest.approx(np.sqrt(grid.volume), rel=1e-12)
