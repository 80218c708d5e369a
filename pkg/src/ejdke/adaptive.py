"""Goldenshluger-Lepski bandwidth selection over a finite candidate set.

For candidates ``h, eta`` in ``H_T``:

    V(h) = k / T * (prod h)^(2/d - 1)
    A(h) = max_eta ( ||mu_{h,eta} - mu_eta||_A^2 - V(eta) )_+
    h~   = argmin_h  A(h) + V(h)

Every ``mu_{h,eta}`` factorises over coordinates, so the engine below builds
one ``(samples, nodes)`` matrix per axis and per distinct bandwidth pair and
assembles all estimates with dense matrix products.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from ._kernels import axis_factor_matrix
from .estimator import EvalGrid, estimate_density, estimate_density_convolved, squared_l2_on_A
from .kernel import build_kernel
from .model import DimensionError
from .rng import derive_seed

MODES = ("relaxed", "paper-exact")
DEFAULT_K = 2.0


@dataclass(frozen=True, eq=False)
class BandwidthGrid:
    """Candidate bandwidths ``h_i = 1 / k_i`` with ``prod h`` inside ``bounds``."""

    T: float
    dim: int
    ks: np.ndarray
    mode: str
    k_max: int
    bounds: tuple
    growth_const: float

    @property
    def members(self):
        return 1.0 / self.ks

    def __len__(self):
        return len(self.ks)

    @property
    def products(self):
        return np.prod(self.members, axis=1)

    def index_of(self, h):
        h = np.asarray(h, float)
        k = np.rint(1.0 / h).astype(np.int64)
        hits = np.flatnonzero(np.all(self.ks == k[None, :], axis=1))
        if len(hits) == 0 or not np.allclose(1.0 / k, h, rtol=1e-12, atol=0.0):
            raise KeyError(f"bandwidth {np.asarray(h).tolist()} not in the grid")
        return int(hits[0])

    def subset(self, indices):
        ks = self.ks[np.asarray(indices, dtype=np.int64)]
        return BandwidthGrid(self.T, self.dim, ks, self.mode, self.k_max, self.bounds, self.growth_const)

    def to_dict(self):
        return {
            "T": self.T,
            "dim": self.dim,
            "mode": self.mode,
            "k_max": self.k_max,
            "prod_h_bounds": list(self.bounds),
            "size": len(self),
            "growth_const": self.growth_const,
            "k_vectors": self.ks.tolist(),
        }


def product_bounds(T, d, mode):
    """Interval that ``prod h`` must fall in."""
    if mode == "relaxed":
        return (T ** (-d / 3.0), 1.0)
    if mode == "paper-exact":
        lt = math.log(T)
        return (lt ** (2 * d) / T ** (d / 3.0), (1.0 / lt) ** (3.0 * d / (d - 2)))
    raise ValueError(f"unknown grid mode {mode!r}; expected one of {MODES}")


def candidate_bandwidths(T, d, mode="relaxed", k_max=8):
    """Enumerate ``k in {1..k_max}^d`` and keep the admissible ``h = 1/k``."""
    d = int(d)
    if d < 3:
        raise ValueError(
            "adaptive bandwidth selection is defined for d >= 3 only; "
            "in dimensions 1 and 2 the rate bandwidth needs no adaptation"
        )
    if T <= 1.0:
        raise ValueError("T must exceed 1")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    lo, hi = product_bounds(T, d, mode)
    ks = np.array(list(itertools.product(range(1, k_max + 1), repeat=d)), dtype=np.int64)
    prod_h = 1.0 / np.prod(ks.astype(float), axis=1)
    keep = (prod_h >= lo) & (prod_h <= hi)
    ks = ks[keep].reshape(-1, d)
    # |H_T| <= T^c, so also <= c * T^c for c >= 1
    c = max(1.0, math.log(max(len(ks), 1)) / math.log(T))
    return BandwidthGrid(float(T), d, ks, mode, int(k_max), (lo, hi), c)


def variance_penalty(h, T, d, k):
    if k <= 0:
        raise ValueError("k must be positive")
    prod_h = float(np.prod(np.asarray(h, float)))
    return k / T * prod_h ** (2.0 / d - 1.0)


def bias_proxy(traj, kernel, h, grid, eval_grid, k, backend=None):
    """``A(h)`` computed estimator by estimator (no batching)."""
    if len(grid) == 0:
        raise ValueError("empty bandwidth grid")
    h = np.asarray(h, float)
    best = 0.0
    for eta in grid.members:
        conv = estimate_density_convolved(traj, kernel, h, eta, eval_grid, backend).values
        plain = estimate_density(traj, kernel, eta, eval_grid, backend).values
        term = squared_l2_on_A(conv, plain, eval_grid) - variance_penalty(eta, traj.T, grid.dim, k)
        best = max(best, term)
    return best


# --------------------------------------------------------------------------
# batched engine
# --------------------------------------------------------------------------


def _pair_key(ka, kb):
    """Per-axis factor key: ``(k, 0)`` plain, ``(min, max)`` convolved."""
    if kb == 0:
        return (int(ka), 0)
    return (int(min(ka, kb)), int(max(ka, kb)))


def batched_estimates(traj, kernel, eval_grid, combos, chunk=4096):
    """Estimates for many separable bandwidth combinations at once.

    Parameters
    ----------
    combos : sequence of tuples
        One per-axis key per coordinate, see ``_pair_key``.

    Returns
    -------
    dict
        ``combo -> values`` on ``eval_grid``.
    """
    d = eval_grid.dim
    axes = eval_grid.axes
    m = [len(a) for a in axes]
    combos = list(OrderedDict.fromkeys(tuple(c) for c in combos))
    groups = OrderedDict()
    for c in combos:
        groups.setdefault(c[:-1], []).append(c[-1])
    lasts = {p: tuple(OrderedDict.fromkeys(v)) for p, v in groups.items()}
    needed = [set() for _ in range(d)]
    for c in combos:
        for j in range(d):
            needed[j].add(c[j])
    prefix_size = int(np.prod(m[:-1])) if d > 1 else 1
    acc = {p: np.zeros((prefix_size, len(ls) * m[-1])) for p, ls in lasts.items()}

    states = traj.states
    n = len(states)
    for s in range(0, n, chunk):
        block = states[s : s + chunk]
        rows = len(block)
        fac = []
        for j in range(d):
            mats = {}
            for key in sorted(needed[j]):
                h = 1.0 / key[0]
                eta = 1.0 / key[1] if key[1] else 0.0
                mats[key] = axis_factor_matrix(axes[j], block[:, j], kernel, h, eta)
            fac.append(mats)
        stacks = {}
        for p, ls in lasts.items():
            if ls not in stacks:
                stacks[ls] = np.hstack([fac[d - 1][key] for key in ls])
            kr = np.ones((rows, 1))
            for j, key in enumerate(p):
                kr = (kr[:, :, None] * fac[j][key][:, None, :]).reshape(rows, -1)
            acc[p] += kr.T @ stacks[ls]

    weight = traj.dt / traj.T
    out = {}
    for p, ls in lasts.items():
        block = acc[p] * weight
        for i, key in enumerate(ls):
            vals = block[:, i * m[-1] : (i + 1) * m[-1]]
            out[p + (key,)] = vals.reshape(eval_grid.counts)
    return out


@dataclass(eq=False)
class GLTable:
    """Squared distances ``D[a, b] = ||mu_{h_a, h_b} - mu_{h_b}||_A^2`` and plain estimates."""

    grid: BandwidthGrid
    eval_grid: EvalGrid
    T: float
    distances: np.ndarray
    plain: list

    def penalties(self, k):
        return np.array([variance_penalty(h, self.T, self.grid.dim, k) for h in self.grid.members])

    def bias_terms(self, k):
        V = self.penalties(k)
        A = np.maximum(np.max(self.distances - V[None, :], axis=1), 0.0)
        return A, V


def gl_table(traj, kernel, grid, eval_grid, chunk=4096):
    if len(grid) == 0:
        raise ValueError("empty bandwidth grid")
    if traj.dim != grid.dim or eval_grid.dim != grid.dim:
        raise DimensionError("trajectory, bandwidth grid and evaluation grid dimensions differ")
    ks = grid.ks
    d = grid.dim
    combos = []
    for a in range(len(ks)):
        combos.append(tuple(_pair_key(k, 0) for k in ks[a]))
        for b in range(len(ks)):
            combos.append(tuple(_pair_key(ks[a, j], ks[b, j]) for j in range(d)))
    est = batched_estimates(traj, kernel, eval_grid, combos, chunk)
    plain = [est[tuple(_pair_key(k, 0) for k in ks[a])] for a in range(len(ks))]
    D = np.empty((len(ks), len(ks)))
    for a in range(len(ks)):
        for b in range(len(ks)):
            conv = est[tuple(_pair_key(ks[a, j], ks[b, j]) for j in range(d))]
            D[a, b] = squared_l2_on_A(conv, plain[b], eval_grid)
    return GLTable(grid, eval_grid, traj.T, D, plain)


@dataclass(eq=False)
class AdaptiveSelection:
    members: np.ndarray
    A: np.ndarray
    V: np.ndarray
    selected: int
    k: float
    grid: BandwidthGrid
    estimate: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    @property
    def criterion(self):
        return self.A + self.V

    @property
    def h_tilde(self):
        return self.members[self.selected]

    def to_dict(self):
        return {
            "h_tilde": self.h_tilde.tolist(),
            "selected_index": int(self.selected),
            "k": self.k,
            "A_plus_V_min": float(self.criterion[self.selected]),
            "grid": self.grid.to_dict(),
            "provenance": self.provenance,
            "table": [
                {"h": h.tolist(), "A": float(a), "V": float(v), "A_plus_V": float(a + v), "selected": i == self.selected}
                for i, (h, a, v) in enumerate(zip(self.members, self.A, self.V))
            ],
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
        d = self.members.shape[1]
        w.writerow([f"h{j + 1}" for j in range(d)] + ["A", "V", "A_plus_V", "selected"])
        for i, (h, a, v) in enumerate(zip(self.members, self.A, self.V)):
            w.writerow([repr(float(x)) for x in h] + [repr(float(a)), repr(float(v)), repr(float(a + v)), int(i == self.selected)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def argmin_smoothest(criterion, members):
    """Index of the minimum; ties go to the largest ``prod h``, then the lexicographically largest ``h``."""
    crit = np.asarray(criterion, float)
    ties = np.flatnonzero(crit == crit.min())
    return int(max(ties, key=lambda i: (float(np.prod(members[i])), tuple(members[i]))))


def select_from_table(table, k):
    A, V = table.bias_terms(k)
    idx = argmin_smoothest(A + V, table.grid.members)
    return AdaptiveSelection(table.grid.members, A, V, idx, float(k), table.grid, table.plain[idx])


def select_bandwidth(traj, kernel, grid, eval_grid, k=DEFAULT_K, chunk=4096):
    """Run the full procedure and keep the table."""
    if len(grid) == 0:
        raise ValueError("empty bandwidth grid")
    table = gl_table(traj, kernel, grid, eval_grid, chunk)
    sel = select_from_table(table, k)
    sel.provenance = dict(traj.provenance(), eval_grid=eval_grid.to_dict(), kernel_order=kernel.order)
    return sel


# --------------------------------------------------------------------------
# calibration of k
# --------------------------------------------------------------------------


@dataclass(eq=False)
class CalibrationResult:
    k_grid: np.ndarray
    median_risk: np.ndarray
    risks: np.ndarray
    chosen_k: float
    flat: bool
    oracle_risk: float
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "k_grid": self.k_grid.tolist(),
            "median_risk": self.median_risk.tolist(),
            "chosen_k": self.chosen_k,
            "flat": self.flat,
            "oracle_risk": self.oracle_risk,
            "replications": int(self.risks.shape[0]),
            "config": self.config,
        }

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "median_risk", "chosen"])
        for k, r in zip(self.k_grid, self.median_risk):
            w.writerow([repr(float(k)), repr(float(r)), int(k == self.chosen_k)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def elbow_choice(k_grid, median_risk, rel=0.05):
    """First ``k`` (ascending) whose risk is within ``rel`` of the curve minimum."""
    order = np.argsort(k_grid, kind="stable")
    k_sorted = np.asarray(k_grid, float)[order]
    r_sorted = np.asarray(median_risk, float)[order]
    floor = r_sorted.min()
    flat = bool(r_sorted.max() <= (1.0 + rel) * floor)
    first = int(np.flatnonzero(r_sorted <= (1.0 + rel) * floor)[0])
    return float(k_sorted[first]), flat


@dataclass(eq=False)
class ReplicationOutcome:
    """Per-path risks: the adaptive one for every ``k`` and every grid member's."""

    adaptive: np.ndarray
    members: np.ndarray
    selected: np.ndarray
    argmin_exact: bool


def adaptive_replication(model, T, dt, kernel, grid, eval_grid, reference, k_values, seed, burn_in=None):
    from .simulate import simulate_path

    traj = simulate_path(model, T=T, dt=dt, burn_in=burn_in, seed=seed)
    table = gl_table(traj, kernel, grid, eval_grid)
    member_risk = np.array([squared_l2_on_A(p, reference, eval_grid) for p in table.plain])
    sels = [select_from_table(table, k) for k in k_values]
    idx = [s.selected for s in sels]
    exact = all(s.criterion[s.selected] == s.criterion.min() for s in sels)
    return ReplicationOutcome(member_risk[idx], member_risk, np.asarray(idx), exact)


def run_adaptive_replications(model, T, dt, kernel, grid, eval_grid, reference, k_values, replications, seed, burn_in=None, workers=None):
    """Independent replications; seeds derived from ``(seed, r)``."""
    seeds = [derive_seed(seed, r) for r in range(replications)]

    def job(s):
        return adaptive_replication(model, T, dt, kernel, grid, eval_grid, reference, k_values, s, burn_in)

    n_workers = _accel.max_workers(workers)
    if n_workers <= 1:
        return [job(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(job, seeds))


def calibrate_k(
    model,
    T,
    dt,
    eval_grid,
    k_grid,
    replications=10,
    seed=0,
    kernel=None,
    mode="relaxed",
    k_max=4,
    reference=None,
    oracle_factor=100,
    burn_in=None,
    workers=None,
):
    """Pick ``k`` from the median-risk curve over simulated paths.

    Every ``k`` is applied to the same paths, so the curve is free of
    between-``k`` sampling noise. ``reference`` defaults to a histogram
    oracle from one path ``oracle_factor`` times longer than ``T``.
    """
    if replications < 10:
        raise ValueError("calibration needs at least 10 replications")
    k_grid = np.asarray(sorted(float(k) for k in k_grid))
    if len(k_grid) == 0 or np.any(k_grid <= 0):
        raise ValueError("k_grid must be a nonempty set of positive reals")
    kernel = kernel if kernel is not None else build_kernel(2)
    grid = candidate_bandwidths(T, model.dim, mode, k_max)
    if reference is None:
        from .rates import histogram_oracle

        reference = histogram_oracle(model, eval_grid, oracle_factor * T, dt, derive_seed(seed, 2**31)).values
    outs = run_adaptive_replications(model, T, dt, kernel, grid, eval_grid, reference, k_grid, replications, seed, burn_in, workers)
    risks = np.array([o.adaptive for o in outs])
    members = np.array([o.members for o in outs])
    med = np.median(risks, axis=0)
    chosen, flat = elbow_choice(k_grid, med)
    cfg = {
        "T": T,
        "dt": dt,
        "mode": mode,
        "k_max": k_max,
        "kernel_order": kernel.order,
        "replications": replications,
        "seed": seed,
        "eval_grid": eval_grid.to_dict(),
        "model": model.label,
    }
    return CalibrationResult(k_grid, med, risks, chosen, flat, float(np.min(np.median(members, axis=0))), cfg)


__all__ = [
    "BandwidthGrid",
    "AdaptiveSelection",
    "CalibrationResult",
    "GLTable",
    "candidate_bandwidths",
    "variance_penalty",
    "bias_proxy",
    "gl_table",
    "select_bandwidth",
    "select_from_table",
    "argmin_smoothest",
    "calibrate_k",
    "elbow_choice",
    "run_adaptive_replications",
]
