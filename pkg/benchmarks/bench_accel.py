"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_accel.py [--steps N] [--repeat R]

Each hot loop runs once to warm up (numba compiles on first call), then the
best of ``--repeat`` timings is reported together with the largest
difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from ejdke import _accel
from ejdke.estimator import EvalGrid, estimate_density, estimate_density_convolved
from ejdke.kernel import build_kernel
from ejdke.model import build_model
from ejdke.rates import occupation_times
from ejdke.simulate import simulate_path


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    model = build_model("radial-pushback-3")
    dt = 0.01
    T = args.steps * dt
    kernel = build_kernel(2)
    grid = EvalGrid.cube(3, 1.5, 16)
    traj = simulate_path(model, T, dt, seed=1)
    h = np.array([0.3, 0.3, 0.3])
    eta = np.array([0.5, 0.25, 0.5])
    halves = 0.5 * np.array([2.0**-k for k in range(3, 8)]) ** (1 / 3)

    cases = {
        "euler": lambda b: simulate_path(model, T, dt, seed=1, backend=b).states,
        "estimate": lambda b: estimate_density(traj, kernel, h, grid, backend=b).values,
        "estimate_convolved": lambda b: estimate_density_convolved(traj, kernel, h, eta, grid, backend=b).values,
        "occupation": lambda b: occupation_times(traj.states, dt, np.zeros(3), halves, backend=b),
    }
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases.items():
        t_nb, a = best_of(lambda: fn("numba"), args.repeat)
        t_np, b = best_of(lambda: fn("numpy"), args.repeat)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:<20}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}{diff:>14.3g}")


if __name__ == "__main__":
    main()
