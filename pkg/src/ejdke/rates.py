"""Rate-optimal bandwidths, theoretical rates and the Monte Carlo harness.

Bandwidth rules (``T`` the horizon):

* ``d >= 3``: ``h_l = T^(-a_l)`` with ``a_l = beta_bar / (beta_l (2 beta_bar + d - 2))``,
  giving the rate ``T^(-2 beta_bar / (2 beta_bar + d - 2))``;
* ``d in {1, 2}``: the variance is ``~ 1/T`` up to logarithms whatever ``h``,
  so ``h = T^(-1/(2 beta))`` keeps the squared bias at the same order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _accel
from ._kernels import _cube_occupation_nb, _cube_occupation_py, _node_histogram_nb, _node_histogram_py
from .estimator import EvalGrid, estimate_density, squared_l2_on_A
from .kernel import build_kernel
from .model import continuous_stationary_density_1d
from .rng import derive_seed
from .simulate import simulate_chunks, simulate_coupled, simulate_path


@dataclass(frozen=True)
class SmoothnessSpec:
    beta: tuple

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if not beta or any(not b > 0 for b in beta):
            raise ValueError("smoothness indices must be positive")
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self):
        return len(self.beta)

    @property
    def beta_bar(self):
        """Harmonic mean ``d / sum(1 / beta_l)``."""
        return self.dim / sum(1.0 / b for b in self.beta)

    def to_dict(self):
        return {"beta": list(self.beta), "beta_bar": self.beta_bar}


def rate_exponents(spec, d):
    """Exponents ``a_l`` with ``h_l = T^(-a_l)``."""
    if d < 3:
        raise ValueError("the anisotropic rate bandwidth is defined for d >= 3")
    if spec.dim != d:
        raise ValueError(f"smoothness vector has {spec.dim} entries, expected {d}")
    bb = spec.beta_bar
    return np.array([bb / (b * (2.0 * bb + d - 2.0)) for b in spec.beta])


def rate_optimal_bandwidth(spec, d, T):
    a = rate_exponents(spec, d)
    return np.minimum(float(T) ** (-a), 1.0)


def rate_exponent(d, beta_bar):
    """Power of ``T`` in the risk bound, log factors dropped."""
    if d >= 3:
        return -2.0 * beta_bar / (2.0 * beta_bar + d - 2.0)
    return -1.0


def theoretical_rate(d, alpha, beta_bar, T):
    """Risk envelope as a function of ``T``.

    For ``d = 1`` it is ``(log T)^p / T`` with ``p = max(2 - (1 + alpha)/2, 1)``,
    which decreases only once ``T > e^p``.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    if beta_bar <= 0:
        raise ValueError("beta_bar must be positive")
    T = np.asarray(T, dtype=float)
    if d == 1:
        p = max(2.0 - (1.0 + alpha) / 2.0, 1.0)
        return np.log(T) ** p / T
    if d == 2:
        return np.log(T) / T
    return T ** rate_exponent(d, beta_bar)


# --------------------------------------------------------------------------
# bandwidth rules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RateRule:
    """``h(T)`` for a smoothness vector; ``scale`` multiplies every entry."""

    spec: SmoothnessSpec
    scale: float = 1.0

    def __call__(self, T):
        d = self.spec.dim
        if d >= 3:
            h = rate_optimal_bandwidth(self.spec, d, T)
        else:
            h = np.array([float(T) ** (-1.0 / (2.0 * b)) for b in self.spec.beta])
        return np.minimum(self.scale * h, 1.0)

    @property
    def exponent(self):
        return rate_exponent(self.spec.dim, self.spec.beta_bar)

    def to_dict(self):
        return {"kind": "rate", "scale": self.scale, **self.spec.to_dict()}


@dataclass(frozen=True)
class FixedRule:
    """The same ``h`` for every ``T``: the risk stalls at the squared bias."""

    h: tuple

    def __call__(self, T):
        return np.asarray(self.h, float)

    @property
    def exponent(self):
        return 0.0

    def to_dict(self):
        return {"kind": "fixed", "h": list(self.h)}


# --------------------------------------------------------------------------
# reference densities
# --------------------------------------------------------------------------


@dataclass(eq=False)
class ReferenceDensity:
    grid: EvalGrid
    values: np.ndarray
    kind: str
    provenance: dict = field(default_factory=dict)


def closed_form_reference(model, eval_grid):
    mu = continuous_stationary_density_1d(model)
    vals = mu(eval_grid.nodes()[:, 0]).reshape(eval_grid.counts)
    return ReferenceDensity(eval_grid, vals, "closed-form", {"model": model.label})


def histogram_oracle(model, eval_grid, T_oracle, dt, seed, cell_width=None, burn_in=None, backend=None):
    """Occupation density of cubes centred at the grid nodes, from one long path.

    ``cell_width`` defaults to the grid spacing (cubes tile the box) and may
    not exceed it.
    """
    delta = eval_grid.delta
    width = delta.copy() if cell_width is None else np.broadcast_to(np.asarray(cell_width, float), delta.shape).copy()
    if np.any(width > delta * (1 + 1e-12)) or np.any(width <= 0):
        raise ValueError("oracle cells must be positive and no wider than the grid spacing")
    backend = _accel.resolve(backend)
    counts = np.asarray(eval_grid.counts, dtype=np.int64)
    hist = np.zeros(eval_grid.size, dtype=np.int64)
    n = 0
    for block in simulate_chunks(model, T_oracle, dt, burn_in, seed, backend=backend):
        if backend == "numba":
            _node_histogram_nb(block, eval_grid.lo, delta, counts, 0.5 * width, hist)
        else:
            _node_histogram_py(block, eval_grid.lo, delta, counts, 0.5 * width, hist)
        n += len(block)
    vals = hist.reshape(eval_grid.counts) / (n * float(np.prod(width)))
    prov = {"model": model.label, "T_oracle": float(T_oracle), "dt": dt, "seed": int(seed), "cell_width": width.tolist()}
    return ReferenceDensity(eval_grid, vals, "histogram", prov)


# --------------------------------------------------------------------------
# MSE experiment
# --------------------------------------------------------------------------


def _slope(x, y):
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr)


@dataclass(eq=False)
class RateReport:
    T_grid: np.ndarray
    errors: np.ndarray  # (len(T_grid), replications)
    slope: float
    slope_stderr: float
    theory: float
    tolerance: float
    config: dict = field(default_factory=dict)
    dt_check: dict = field(default_factory=dict)

    @property
    def median(self):
        return np.median(self.errors, axis=1)

    @property
    def q25(self):
        return np.quantile(self.errors, 0.25, axis=1)

    @property
    def q75(self):
        return np.quantile(self.errors, 0.75, axis=1)

    @property
    def passed(self):
        return bool(abs(self.slope - self.theory) <= self.tolerance)

    def inversions(self):
        """Number of ``T`` steps on which the median error went up."""
        return int(np.sum(np.diff(self.median) > 0))

    def to_dict(self):
        return {
            "T_grid": self.T_grid.tolist(),
            "median": self.median.tolist(),
            "q25": self.q25.tolist(),
            "q75": self.q75.tolist(),
            "replications": int(self.errors.shape[1]),
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "theory": self.theory,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "config": self.config,
            "dt_check": self.dt_check,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "median", "q25", "q75", "n"])
        for row in zip(self.T_grid, self.median, self.q25, self.q75):
            w.writerow([repr(float(v)) for v in row] + [self.errors.shape[1]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def plot_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["log_T", "log_median"])
        for t, m in zip(self.T_grid, self.median):
            w.writerow([repr(math.log(t)), repr(math.log(m))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _pool_map(fn, items, workers):
    n_workers = _accel.max_workers(workers)
    if n_workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))


def mse_experiment(
    model,
    rule,
    T_grid,
    replications,
    eval_grid,
    seed,
    reference=None,
    dt=0.01,
    kernel=None,
    burn_in=None,
    tolerance=0.25,
    workers=None,
    oracle_factor=100,
    oracle_dt=None,
    dt_check=False,
):
    """Squared ``L2(A)`` error of ``mu_{h(T)}`` over replications and ``T``.

    Each ``(T index, replication)`` pair draws its own seed from ``seed``, so
    the report does not depend on the worker count.
    """
    T_grid = np.asarray(sorted(float(t) for t in T_grid))
    if len(T_grid) < 3:
        raise ValueError("a slope fit needs at least 3 values of T")
    if replications < 1:
        raise ValueError("replications must be positive")
    kernel = kernel if kernel is not None else build_kernel(2)
    if reference is None:
        if model.dim == 1 and not model.has_jumps:
            reference = closed_form_reference(model, eval_grid)
        else:
            reference = histogram_oracle(
                model, eval_grid, oracle_factor * T_grid[-1], oracle_dt or dt, derive_seed(seed, 2**31)
            )
    ref = reference.values if isinstance(reference, ReferenceDensity) else np.asarray(reference, float)

    jobs = [(i, r) for i in range(len(T_grid)) for r in range(replications)]

    def job(ir):
        i, r = ir
        T = T_grid[i]
        traj = simulate_path(model, T=T, dt=dt, burn_in=burn_in, seed=derive_seed(seed, i, r))
        est = estimate_density(traj, kernel, rule(T), eval_grid).values
        return squared_l2_on_A(est, ref, eval_grid)

    errs = np.array(_pool_map(job, jobs, workers)).reshape(len(T_grid), replications)
    slope, se = _slope(T_grid, np.median(errs, axis=1))
    config = {
        "model": model.label,
        "model_spec": model.to_dict(),
        "rule": rule.to_dict(),
        "T_grid": T_grid.tolist(),
        "replications": replications,
        "dt": dt,
        "burn_in": model.burn_in_default if burn_in is None else burn_in,
        "kernel_order": kernel.order,
        "eval_grid": eval_grid.to_dict(),
        "seed": int(seed),
        "reference": {"kind": getattr(reference, "kind", "user"), **getattr(reference, "provenance", {})},
    }
    report = RateReport(T_grid, errs, slope, se, rule.exponent, tolerance, config)
    if dt_check:
        report.dt_check = refinement_check(model, rule, T_grid[0], dt, eval_grid, kernel, ref, seed, burn_in, errs[0])
    return report


def refinement_check(model, rule, T, dt, eval_grid, kernel, ref, seed, burn_in, errors):
    """Effect of halving ``dt`` on a shared driver.

    ``error_shift`` is the change of the squared error against the reference;
    it passes when below the Monte Carlo standard error of the squared errors
    at the same ``T``. ``sq_change`` is ``||mu(dt) - mu(dt/2)||_A^2``.
    """
    coarse, fine = simulate_coupled(model, T, dt, burn_in, derive_seed(seed, 0, 0))
    h = rule(T)
    a = estimate_density(coarse, kernel, h, eval_grid).values
    b = estimate_density(fine, kernel, h, eval_grid).values
    shift = abs(squared_l2_on_A(a, ref, eval_grid) - squared_l2_on_A(b, ref, eval_grid))
    se = float(np.std(errors, ddof=1) / math.sqrt(len(errors))) if len(errors) > 1 else float("nan")
    return {
        "T": float(T),
        "dt": dt,
        "sq_change": squared_l2_on_A(a, b, eval_grid),
        "error_shift": shift,
        "mc_stderr": se,
        "passed": bool(shift < se),
    }


# --------------------------------------------------------------------------
# variance probe
# --------------------------------------------------------------------------


@dataclass(eq=False)
class VarianceReport:
    support_sizes: np.ndarray
    variances: np.ndarray
    T: float
    slope: float
    slope_stderr: float
    theory: float
    tolerance: float
    control_variance: float
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(abs(self.slope - self.theory) <= self.tolerance)

    def to_dict(self):
        return {
            "support_sizes": self.support_sizes.tolist(),
            "variances": self.variances.tolist(),
            "T": self.T,
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "theory": self.theory,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "control_variance": self.control_variance,
            "config": self.config,
        }

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "variance", "variance_over_T"])
        for s, v in zip(self.support_sizes, self.variances):
            w.writerow([repr(float(s)), repr(float(v)), repr(float(v / self.T))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def variance_exponent(d):
    return 1.0 + 2.0 / d if d >= 3 else 2.0


def occupation_times(states, dt, center, halves, backend=None):
    """``int 1{|X_t - center|_inf < half} dt`` for each half-width."""
    backend = _accel.resolve(backend)
    fn = _cube_occupation_nb if backend == "numba" else _cube_occupation_py
    return dt * fn(states, np.asarray(center, float), np.asarray(halves, float)).astype(float)


def variance_probe(
    model,
    support_sizes,
    T,
    replications,
    seed,
    dt=0.002,
    center=None,
    burn_in=None,
    tolerance=0.3,
    workers=None,
):
    """Slope of ``log(Var(int_0^T 1_S(X_t) dt) / T)`` against ``log |S|``.

    ``S`` is a cube of volume ``s`` around ``center`` (the origin by
    default). All cubes are read off the same paths.
    """
    if replications < 20:
        raise ValueError("the variance probe needs at least 20 replications")
    s = np.asarray(sorted(float(v) for v in support_sizes))
    if np.any(s <= 0) or np.any(s >= 1):
        raise ValueError("support sizes must lie in (0, 1)")
    d = model.dim
    center = np.zeros(d) if center is None else np.asarray(center, float)
    halves = 0.5 * s ** (1.0 / d)

    def job(r):
        occ = np.zeros(len(s))
        total = 0.0
        for block in simulate_chunks(model, T, dt, burn_in, derive_seed(seed, r)):
            occ += occupation_times(block, dt, center, halves)
            # f = 1 everywhere: the integral is T whatever the path
            total += dt * len(block)
        return np.concatenate((occ, [total]))

    rows = np.array(_pool_map(job, range(replications), workers))
    var = np.var(rows[:, :-1], axis=0, ddof=1)
    control = float(np.var(rows[:, -1], ddof=1))
    slope, se = _slope(s, var / T)
    cfg = {
        "model": model.label,
        "T": T,
        "dt": dt,
        "replications": replications,
        "seed": int(seed),
        "center": center.tolist(),
        "burn_in": model.burn_in_default if burn_in is None else burn_in,
    }
    return VarianceReport(s, var, float(T), slope, se, variance_exponent(d), tolerance, control, cfg)


__all__ = [
    "SmoothnessSpec",
    "RateRule",
    "FixedRule",
    "RateReport",
    "VarianceReport",
    "ReferenceDensity",
    "rate_exponents",
    "rate_optimal_bandwidth",
    "rate_exponent",
    "theoretical_rate",
    "closed_form_reference",
    "histogram_oracle",
    "mse_experiment",
    "refinement_check",
    "variance_probe",
    "variance_exponent",
    "occupation_times",
]
