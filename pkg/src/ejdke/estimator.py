"""Kernel estimators of the invariant density on a box evaluation grid.

    mu_h(x)     = (1/T) int_0^T K_h(X_u - x) du
    mu_{h,eta}(x) = (1/T) int_0^T (K_h * K_eta)(X_u - x) du

The time integral is the left Riemann sum over the trajectory grid (weight
``dt`` per sample).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from ._kernels import _scatter_nb, _scatter_py
from .kernel import check_bandwidth, gauss_legendre
from .model import DimensionError


@dataclass(frozen=True, eq=False)
class EvalGrid:
    """Midpoint grid on the box ``[lo_1, hi_1] x ... x [lo_d, hi_d]``."""

    lo: np.ndarray
    hi: np.ndarray
    counts: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(self.counts), lo.shape))
        if lo.shape != hi.shape:
            raise DimensionError("lo and hi differ in dimension")
        if np.any(lo >= hi):
            raise ValueError("need lo < hi on every axis")
        if any(c < 1 for c in counts):
            raise ValueError("every axis needs at least one node")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def cube(cls, d, half_width, n):
        return cls(-half_width * np.ones(d), half_width * np.ones(d), (n,) * d)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def delta(self):
        return (self.hi - self.lo) / np.asarray(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def size(self):
        return int(np.prod(self.counts))

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    @property
    def cell_volume(self):
        return float(np.prod(self.delta))

    @property
    def axes(self):
        return [self.lo[j] + (np.arange(c) + 0.5) * self.delta[j] for j, c in enumerate(self.counts)]

    @property
    def weights(self):
        return np.full(self.counts, self.cell_volume)

    def nodes(self):
        """All nodes, shape ``(size, d)``, C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def padded(self, pad):
        """Box enlarged by ``pad`` on every side with the same spacing.

        ``pad`` is rounded up to a whole number of cells so the original nodes
        stay nodes of the padded grid.
        """
        extra = np.ceil(np.asarray(pad, float) / self.delta - 1e-12).astype(int)
        extra = np.broadcast_to(extra, self.lo.shape)
        return EvalGrid(
            self.lo - extra * self.delta,
            self.hi + extra * self.delta,
            tuple(c + 2 * e for c, e in zip(self.counts, extra)),
        )

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, cfg):
        return cls(cfg["lo"], cfg["hi"], tuple(cfg["counts"]))


@dataclass(eq=False)
class DensityEstimate:
    grid: EvalGrid
    values: np.ndarray
    h: np.ndarray
    eta: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "h": self.h.tolist(),
            "eta": None if self.eta is None else self.eta.tolist(),
            "provenance": self.provenance,
            "min": float(self.values.min()),
            "max": float(self.values.max()),
            "mass_on_grid": float(np.sum(self.values) * self.grid.cell_volume),
        }

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(self.grid.dim)] + ["value"])
        for node, v in zip(self.grid.nodes(), self.values.ravel()):
            w.writerow([repr(float(c)) for c in node] + [repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def save(self, json_path, csv_path):
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        self.to_csv(csv_path)


def _check_inputs(traj, grid, *bands):
    if traj.dim != grid.dim:
        raise DimensionError(f"trajectory dimension {traj.dim} != grid dimension {grid.dim}")
    out = []
    for h in bands:
        h = check_bandwidth(h)
        if h.shape != (grid.dim,):
            raise DimensionError(f"bandwidth has {h.size} entries, expected {grid.dim}")
        out.append(h)
    if traj.n_steps == 0:
        raise ValueError("empty trajectory")
    return out


def _scatter(traj, kernel, grid, h, eta, backend):
    backend = _accel.resolve(backend)
    weight = traj.dt / traj.T
    if backend == "numba":
        t, w = gauss_legendre(kernel.gauss_points)
        flat = _scatter_nb(
            traj.states,
            weight,
            grid.lo,
            grid.delta,
            np.asarray(grid.counts, dtype=np.int64),
            np.ascontiguousarray(kernel.coeffs, dtype=float),
            t,
            w,
            np.asarray(h, dtype=float),
            np.asarray(eta, dtype=float),
        )
    else:
        flat = _scatter_py(traj.states, weight, grid.axes, kernel, h, eta)
    return flat.reshape(grid.counts)


def estimate_density(traj, kernel, h, grid, backend=None):
    """``mu_h`` at every node of ``grid``.

    Values may be negative for kernels of order two or more; they are kept as
    they are.
    """
    (h,) = _check_inputs(traj, grid, h)
    vals = _scatter(traj, kernel, grid, h, np.zeros_like(h), backend)
    return DensityEstimate(grid, vals, h, None, traj.provenance())


def estimate_density_convolved(traj, kernel, h, eta, grid, backend=None):
    """``mu_{h,eta}`` at every node; symmetric in ``(h, eta)``."""
    h, eta = _check_inputs(traj, grid, h, eta)
    vals = _scatter(traj, kernel, grid, h, eta, backend)
    return DensityEstimate(grid, vals, h, eta, traj.provenance())


def l2_distance_on_A(f_vals, g_vals, grid):
    """Midpoint-rule ``||f - g||_A``."""
    f = np.asarray(f_vals, dtype=float)
    g = np.asarray(g_vals, dtype=float)
    if f.shape != g.shape or f.size != grid.size:
        raise DimensionError(f"shape mismatch: {f.shape} vs {g.shape} on a grid of {grid.size} nodes")
    diff = (f - g).reshape(grid.counts)
    return float(np.sqrt(grid.cell_volume * np.sum(diff * diff)))


def squared_l2_on_A(f_vals, g_vals, grid):
    return l2_distance_on_A(f_vals, g_vals, grid) ** 2


def midpoint_mass_bound(kernel, h, grid):
    """Bound on ``|sum_nodes w * mu_h - 1|`` for a grid covering the data padded by ``h``.

    Per axis the midpoint sum of ``K_h(. - y)`` differs from 1 by at most
    ``delta * TV(K) / h``; the product of ``d`` such factors gives the bound.
    """
    h = check_bandwidth(h)
    e = grid.delta * kernel.total_variation / h
    return float(np.prod(1.0 + e) - 1.0)


def covers(grid, states, pad):
    """True if every sample padded by ``pad`` lies inside the grid's box."""
    pad = np.asarray(pad, float)
    return bool(np.all(states.min(axis=0) - pad >= grid.lo) and np.all(states.max(axis=0) + pad <= grid.hi))


def product_kernel_cell_integrals(kernel, h, x_axis, edges):
    """``int_{e_k}^{e_{k+1}} K_h(x_i - y) dy`` for every node ``x_i`` and cell ``k``.

    Exact, from the antiderivative of ``K``.
    """
    x = np.asarray(x_axis, float)[:, None]
    lo = np.asarray(edges[:-1], float)[None, :]
    hi = np.asarray(edges[1:], float)[None, :]
    # y in [lo, hi]  <=>  (x - y)/h in [(x - hi)/h, (x - lo)/h]
    return kernel.primitive((x - lo) / h) - kernel.primitive((x - hi) / h)


def young_inequality_terms(kernel, h, grid, cell_values, padded):
    """Both sides of ``||K_h * g||_A <= ||K_h||_1 ||g||_{2, A~}``.

    ``g`` is piecewise constant on the cells of ``padded`` (the enlarged box
    ``A~``) with values ``cell_values``; ``K_h * g`` is then computed exactly
    at the nodes of ``grid`` and its norm on ``A`` by the midpoint rule.
    """
    h = check_bandwidth(h)
    d = grid.dim
    g = np.asarray(cell_values, float).reshape(padded.counts)
    conv = g
    for j in range(d):
        edges = padded.lo[j] + padded.delta[j] * np.arange(padded.counts[j] + 1)
        mat = product_kernel_cell_integrals(kernel, h[j], grid.axes[j], edges)
        conv = np.tensordot(mat, conv, axes=([1], [j]))
        conv = np.moveaxis(conv, 0, j)
    lhs = float(np.sqrt(grid.cell_volume * np.sum(conv**2)))
    rhs = kernel.l1_norm**d * float(np.sqrt(padded.cell_volume * np.sum(g**2)))
    return lhs, rhs


__all__ = [
    "EvalGrid",
    "DensityEstimate",
    "estimate_density",
    "estimate_density_convolved",
    "l2_distance_on_A",
    "squared_l2_on_A",
    "midpoint_mass_bound",
    "covers",
    "young_inequality_terms",
]
