import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ejdke.model import LevySpec, build_model, continuous_stationary_density_1d
from ejdke.rng import derive_seed, make_rng
from ejdke.simulate import (
    CHUNK_STEPS,
    SimulationError,
    Trajectory,
    TrajectoryFormatError,
    levy_increments,
    read_trajectory,
    simulate_chunks,
    simulate_coupled,
    simulate_path,
    trajectory_bytes,
    trajectory_csv,
    trajectory_from_bytes,
    write_trajectory,
)


class TestLevyIncrements:
    def test_zero_step(self):
        lv = LevySpec(alpha=0.5)
        assert levy_increments(lv, 0.0, make_rng(1)).count == 0

    def test_mean_count(self):
        lv = LevySpec(alpha=0.5, intensity_const=0.1, truncation_low=0.1, truncation_high=10.0)
        lam = 1.1384199576606164  # quadrature of int F, see test_model
        dt = 0.5
        rng = make_rng(2)
        n = 100_000
        counts = np.array([levy_increments(lv, dt, rng).count for _ in range(n)])
        assert abs(counts.mean() - lam * dt) < 4 * math.sqrt(lam * dt / n)

    def test_marks_in_shell_and_symmetric(self):
        lv = LevySpec(alpha=0.5, intensity_const=0.1, truncation_low=0.1, truncation_high=10.0)
        rng = make_rng(3)
        sums = []
        for _ in range(100_000):
            b = levy_increments(lv, 1.0, rng, dim=2)
            assert b.count == len(b.marks)
            tot = np.zeros(2)
            for t, z in b.marks:
                r = np.linalg.norm(z)
                assert 0.1 <= r <= 10.0 and 0.0 <= t <= 1.0
                tot += z
            sums.append(tot)
        sums = np.array(sums)
        se = sums.std(axis=0) / math.sqrt(len(sums))
        assert np.all(np.abs(sums.mean(axis=0)) < 4 * se)

    def test_radius_law(self):
        lv = LevySpec(alpha=0.5, truncation_low=0.1, truncation_high=10.0)
        r = lv.sample_radii(make_rng(4), 200_000)
        # P(r <= x) for the r^{-1-alpha} profile on [lo, hi]
        x = 1.0
        cdf = (0.1**-0.5 - x**-0.5) / (0.1**-0.5 - 10.0**-0.5)
        assert abs(np.mean(r <= x) - cdf) < 4 * math.sqrt(cdf * (1 - cdf) / len(r))

    def test_half_space_marks(self):
        lv = LevySpec(alpha=0.5, symmetric=False)
        rng = make_rng(5)
        firsts = [z[0] for _ in range(2000) for _, z in levy_increments(lv, 1.0, rng, dim=3).marks]
        assert len(firsts) > 0 and min(firsts) > 0


class TestSimulatePath:
    def test_deterministic(self, backend):
        m = build_model("radial-pushback-3")
        a = simulate_path(m, 50.0, 0.01, seed=9, backend=backend)
        b = simulate_path(m, 50.0, 0.01, seed=9, backend=backend)
        assert a == b
        c = simulate_path(m, 50.0, 0.01, seed=10, backend=backend)
        assert not np.array_equal(a.states, c.states)

    def test_backends_agree(self):
        pytest.importorskip("numba")
        m = build_model("radial-pushback-3")
        a = simulate_path(m, 200.0, 0.01, seed=1, backend="numba")
        b = simulate_path(m, 200.0, 0.01, seed=1, backend="numpy")
        np.testing.assert_allclose(a.states, b.states, rtol=0, atol=1e-12)

    def test_grid_invariants(self):
        m = build_model("radial-pushback-2")
        t = simulate_path(m, 10.0, 0.01, seed=0)
        assert t.n_steps == 1000
        assert t.n_steps * t.dt == pytest.approx(10.0, rel=1e-15)
        assert np.all(np.diff(t.times) > 0)
        np.testing.assert_allclose(np.diff(t.times), 0.01, rtol=1e-12)
        assert np.all(np.isfinite(t.states))
        assert t.burn_in == 50.0

    def test_chunks_join(self):
        m = build_model("radial-pushback-1")
        whole = simulate_path(m, 30.0, 0.01, burn_in=1.0, seed=4)
        parts = np.vstack(list(simulate_chunks(m, 30.0, 0.01, burn_in=1.0, seed=4, chunk_steps=CHUNK_STEPS)))
        np.testing.assert_array_equal(whole.states, parts)

    def test_bad_arguments(self):
        m = build_model("radial-pushback-1")
        with pytest.raises(ValueError):
            simulate_path(m, 1.0, 0.0)
        with pytest.raises(ValueError):
            simulate_path(m, 0.001, 0.01)
        with pytest.raises(ValueError):
            simulate_path(m, 1.005, 0.01)

    def test_explosion_names_step(self):
        cfg = {"dim": 1, "drift": {"type": "linear", "param": 200.0}, "diffusion": 1.0, "jump": 0.0, "levy": {"alpha": 0.5}}
        with pytest.raises(SimulationError) as err:
            simulate_path(build_model(cfg), 100.0, 0.1, burn_in=0.0, seed=0)
        assert err.value.step >= 0
        assert f"step {err.value.step}" in str(err.value)

    def test_drift_only_matches_ode(self):
        # b = -tanh: Euler global error is O(dt) against an RK45 reference
        m = build_model("smooth-1d", gamma0=0.0)
        ref = solve_ivp(lambda t, y: -np.tanh(y), (0.0, 1.0), [2.0], rtol=1e-12, atol=1e-12, dense_output=True)
        errs = []
        for dt in (0.02, 0.01, 0.005):
            t = simulate_path(m, 1.0, dt, burn_in=0.0, x0=[2.0], drift_only=True)
            y = ref.sol(t.times)[0]
            errs.append(np.abs(t.states[:, 0] - y).max())
        assert errs[0] < 0.02 and errs[2] < 0.005
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)

    def test_histogram_matches_closed_form(self):
        m = build_model("smooth-1d", gamma0=0.0)
        mu = continuous_stationary_density_1d(m)
        x = simulate_path(m, 1e4, 0.01, seed=11).states[:, 0]
        edges = np.linspace(-6, 6, 61)
        hist, _ = np.histogram(x, bins=edges)
        w = np.diff(edges)
        emp = hist / (len(x) * w)
        mid = 0.5 * (edges[1:] + edges[:-1])
        l1 = np.sum(np.abs(emp - mu(mid)) * w)
        assert l1 < 0.05

    def test_confinement(self):
        x = simulate_path(build_model("radial-pushback-3"), 1000.0, 0.01, seed=12).states
        r = np.linalg.norm(x, axis=1)
        frac = [np.mean(r > R) for R in (2.0, 5.0, 10.0, 20.0)]
        assert all(a >= b for a, b in zip(frac, frac[1:]))
        assert frac[-1] < 1e-3

    def test_halves_converge(self):
        m = build_model("radial-pushback-1")
        edges = np.linspace(-5, 5, 41)
        med = []
        for T in (1e3, 4e3, 1.6e4):
            d = []
            for s in range(20):
                x = simulate_path(m, T, 0.01, seed=derive_seed(77, int(T), s)).states[:, 0]
                a, _ = np.histogram(x[: len(x) // 2], bins=edges, density=True)
                b, _ = np.histogram(x[len(x) // 2 :], bins=edges, density=True)
                d.append(np.sum(np.abs(a - b)) * (edges[1] - edges[0]))
            med.append(np.median(d))
        assert med[0] > med[1] > med[2]

    def test_small_jump_correction(self):
        # zero drift: Var(increment) / dt = sigma^2 + gamma^2 (int |z|^2 F + corrected part)
        cfg = {
            "dim": 1, "drift": "zero", "diffusion": 1.0, "jump": 1.0,
            "levy": {"alpha": 1.5, "intensity_const": 1.0, "truncation_low": 0.5, "truncation_high": 2.0},
        }
        m = build_model(cfg)
        base = 1.0 + m.levy.second_moment(1)
        extra = m.levy.small_jump_variance(1)
        for corr, target in ((False, base), (True, base + extra)):
            x = simulate_path(m, 4000.0, 0.01, burn_in=0.0, seed=1, small_jump_correction=corr).states[:, 0]
            assert np.var(np.diff(x)) / 0.01 == pytest.approx(target, rel=0.05)

    def test_asymmetric_compensation(self):
        # half-space jumps with zero drift: the compensated path has mean zero
        cfg = {
            "dim": 1, "drift": "zero", "diffusion": 1.0, "jump": 1.0,
            "levy": {"alpha": 0.5, "intensity_const": 1.0, "symmetric": False},
        }
        m = build_model(cfg)
        ends = np.array([simulate_path(m, 10.0, 0.01, burn_in=0.0, seed=s).states[-1, 0] for s in range(400)])
        assert abs(ends.mean()) < 4 * ends.std() / math.sqrt(len(ends))

    def test_coupled_paths(self):
        m = build_model("radial-pushback-3")
        coarse, fine = simulate_coupled(m, 100.0, 0.01, seed=3)
        assert coarse.dt == 0.01 and fine.dt == 0.005
        assert fine.n_steps == 2 * coarse.n_steps
        gap = np.abs(coarse.states - fine.states[::2]).max()
        assert gap < 0.1


class TestFileFormat:
    def make(self):
        return simulate_path(build_model("radial-pushback-2"), 5.0, 0.01, seed=2**63 + 5)

    def test_roundtrip(self, tmp_path):
        t = self.make()
        write_trajectory(t, tmp_path / "a.ejdt")
        back = read_trajectory(tmp_path / "a.ejdt")
        assert back == t
        assert back.states.tobytes() == t.states.tobytes()

    def test_header_layout(self):
        buf = trajectory_bytes(self.make())
        assert buf[:4] == b"EJDT"
        assert int.from_bytes(buf[4:6], "little") == 1
        assert int.from_bytes(buf[6:8], "little") == 2
        assert int.from_bytes(buf[8:16], "little") == 500

    def test_truncated(self):
        buf = trajectory_bytes(self.make())
        with pytest.raises(TrajectoryFormatError, match="missing 8 bytes"):
            trajectory_from_bytes(buf[:-8])
        with pytest.raises(TrajectoryFormatError, match="missing"):
            trajectory_from_bytes(buf[:10])

    def test_zero_dimension(self):
        buf = bytearray(trajectory_bytes(self.make()))
        buf[6:8] = (0).to_bytes(2, "little")
        with pytest.raises(TrajectoryFormatError, match="dimension 0"):
            trajectory_from_bytes(bytes(buf))

    def test_dimension_mismatch(self):
        buf = bytearray(trajectory_bytes(self.make()))
        buf[6:8] = (1).to_bytes(2, "little")
        with pytest.raises(TrajectoryFormatError, match="dimension mismatch"):
            trajectory_from_bytes(bytes(buf))

    def test_bad_magic(self):
        buf = b"XXXX" + trajectory_bytes(self.make())[4:]
        with pytest.raises(TrajectoryFormatError, match="magic"):
            trajectory_from_bytes(buf)

    def test_csv(self):
        t = Trajectory(2, 0.5, np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert trajectory_csv(t).splitlines() == ["t,x1,x2", "0.0,1.0,2.0", "0.5,3.0,4.0"]
