"""Euler simulation of jump diffusions with truncated-Levy jumps.

The recursion is

    X_{k+1} = X_k + b(X_k) dt + a(X_k) sqrt(dt) xi_k + gamma(X_k) (J_k - m_F dt)

where ``J_k`` is the sum of the Poisson marks falling in step ``k``. All
random numbers of a chunk are drawn up front with numpy, then the
recursion runs in the compiled (or pure) loop, so both backends consume the
same stream and a seed fixes the path bit for bit.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from ._kernels import DRIFT_CODES, euler_structured
from .rng import make_rng

CHUNK_STEPS = 1 << 18

MAGIC = b"EJDT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQdQd")
_LABEL_LEN = struct.Struct("<H")


class SimulationError(RuntimeError):
    """The Euler recursion produced a non-finite state."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class TrajectoryFormatError(ValueError):
    """Malformed or truncated trajectory file."""


@dataclass(eq=False)
class Trajectory:
    """States ``X_{k dt}`` for ``k = 0 .. n_steps - 1`` after burn-in."""

    dim: int
    dt: float
    states: np.ndarray
    model_label: str = "custom"
    seed: int = 0
    burn_in: float = 0.0

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != self.dim:
            raise ValueError(f"states must have shape (n, {self.dim})")
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_steps(self):
        return self.states.shape[0]

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.dt == other.dt
            and self.model_label == other.model_label
            and self.seed == other.seed
            and self.burn_in == other.burn_in
            and np.array_equal(self.states, other.states)
        )

    def concat(self, other):
        """Join two records on the same grid (used for linearity checks)."""
        if other.dim != self.dim or other.dt != self.dt:
            raise ValueError("trajectories differ in dimension or step")
        return Trajectory(self.dim, self.dt, np.vstack([self.states, other.states]), self.model_label, self.seed, self.burn_in)

    def provenance(self):
        return {"model_label": self.model_label, "T": self.T, "dt": self.dt, "seed": self.seed, "burn_in": self.burn_in}


@dataclass
class JumpBatch:
    """Poisson marks of one time step."""

    count: int
    marks: list = field(default_factory=list)  # (time, z) pairs


def levy_increments(levy, dt, rng, dim=1):
    """Marks of the truncated Levy measure on a step of length ``dt``.

    The count is Poisson with mean ``lambda dt``; each mark has a uniform
    direction and a radius drawn by inverse CDF from the ``r^{-1-alpha}``
    profile on ``[eps_trunc, R_trunc]``.
    """
    if dt <= 0.0:
        return JumpBatch(0, [])
    lam = levy.total_mass(dim)
    count = int(rng.poisson(lam * dt))
    if count == 0:
        return JumpBatch(0, [])
    times = np.sort(rng.random(count) * dt)
    radii = levy.sample_radii(rng, count)
    dirs = levy.sample_directions(rng, count, dim)
    z = dirs * radii[:, None]
    return JumpBatch(count, [(float(t), zz) for t, zz in zip(times, z)])


def _step_jumps(levy, d, dt, n, rng, lam, small_jump_sd):
    """Per-step sums of the marks for ``n`` steps, shape ``(n, d)``."""
    counts = rng.poisson(lam * dt, size=n)
    total = int(counts.sum())
    out = np.zeros((n, d))
    if total:
        radii = levy.sample_radii(rng, total)
        dirs = levy.sample_directions(rng, total, d)
        z = dirs * radii[:, None]
        owner = np.repeat(np.arange(n), counts)
        for j in range(d):
            out[:, j] = np.bincount(owner, weights=z[:, j], minlength=n)
    if small_jump_sd > 0.0:
        out += small_jump_sd * math.sqrt(dt) * rng.standard_normal((n, d))
    return out


def _step_count(T, dt, what="T"):
    n = int(round(T / dt))
    if n < 0 or abs(n * dt - T) > 1e-9 * max(abs(T), dt):
        raise ValueError(f"{what} = {T} is not an integer multiple of dt = {dt}")
    return n


def simulate_chunks(model, T, dt, burn_in=None, seed=0, x0=None, drift_only=False,
                    small_jump_correction=False, backend=None, chunk_steps=CHUNK_STEPS):
    """Yield post-burn-in state blocks of one path (for very long records)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt:
        raise ValueError("T must be at least dt")
    backend = _accel.resolve(backend)
    d = model.dim
    burn_in = model.burn_in_default if burn_in is None else float(burn_in)
    n_burn = _step_count(burn_in, dt, "burn_in") if burn_in > 0 else 0
    n_keep = _step_count(T, dt)
    rng = make_rng(seed)
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float).reshape(d)

    jumps_on = model.has_jumps and not drift_only
    lam = model.levy.total_mass(d) if jumps_on else 0.0
    comp = model.levy.mean_jump(d) * dt if jumps_on else np.zeros(d)
    sj = math.sqrt(model.levy.small_jump_variance(d)) if (jumps_on and small_jump_correction) else 0.0

    form = model.form
    if form is not None:
        kind = DRIFT_CODES[form.drift_kind]
        c = float(form.drift_param) if kind in (0, 1) else 0.0
        B = np.asarray(form.drift_param, float) if kind == 2 else np.zeros((d, d))
        A = np.zeros((d, d)) if drift_only else np.ascontiguousarray(form.diffusion, float)
        G = np.ascontiguousarray(form.jump, float)

    done = 0
    total = n_burn + n_keep
    while done < total:
        m = min(chunk_steps, total - done)
        normals = np.zeros((m, d)) if drift_only else rng.standard_normal((m, d))
        jumps = _step_jumps(model.levy, d, dt, m, rng, lam, sj) if jumps_on else np.zeros((m, d))
        skip = min(max(n_burn - done, 0), m)
        out = np.empty((m - skip, d))
        if form is not None:
            bad = euler_structured(backend, x, dt, kind, c, B, A, G, normals, jumps, comp, out, skip)
        else:
            bad = _euler_generic(model, x, dt, normals, jumps, comp, out, skip, drift_only)
        if bad >= 0:
            step = done + bad
            raise SimulationError(f"non-finite state at step {step} (t = {(step - n_burn) * dt:.6g})", step)
        done += m
        if len(out):
            yield out


def _euler_generic(model, x0, dt, normals, jumps, comp, out, n_skip, drift_only):
    d = model.dim
    x = x0.copy()
    sq = math.sqrt(dt)
    for k in range(normals.shape[0]):
        if k >= n_skip:
            out[k - n_skip] = x
        b = np.asarray(model.drift(x), float).reshape(d)
        step = x + b * dt
        if not drift_only:
            a = np.asarray(model.diffusion(x), float).reshape(d, d)
            g = np.asarray(model.jump_coeff(x), float).reshape(d, d)
            step = step + a @ normals[k] * sq + g @ (jumps[k] - comp)
        x = step
        if not np.all(np.isfinite(x)):
            return k
    x0[:] = x
    return -1


def simulate_path(model, T, dt, burn_in=None, seed=0, x0=None, drift_only=False,
                  small_jump_correction=False, backend=None):
    """Simulate one continuous-record approximation of the model.

    Parameters
    ----------
    model : ModelSpec
    T, dt : float
        Horizon and Euler step; ``T`` must be a multiple of ``dt``.
    burn_in : float, optional
        Time simulated and discarded before ``t = 0``; defaults to
        ``max(50, 5 / C_tilde)``.
    seed : int
        64-bit seed; the output is a deterministic function of all arguments.
    drift_only : bool
        Switch off Brownian and jump noise (ODE integration mode).
    small_jump_correction : bool
        Add the Gaussian surrogate for the jumps removed below ``eps_trunc``.
    """
    burn = model.burn_in_default if burn_in is None else float(burn_in)
    blocks = list(simulate_chunks(model, T, dt, burn, seed, x0, drift_only, small_jump_correction, backend))
    states = np.vstack(blocks) if blocks else np.empty((0, model.dim))
    return Trajectory(model.dim, float(dt), states, model.label, int(seed), burn)


def simulate_coupled(model, T, dt, burn_in=None, seed=0, backend=None):
    """Paths at steps ``dt`` and ``dt / 2`` driven by the same noise.

    Fine-step normals and jump sums are drawn once; every coarse step uses the
    sum of its two fine increments (normals rescaled by ``1/sqrt(2)``). Only
    models with a structured coefficient form are supported.
    """
    if model.form is None:
        raise ValueError("coupled simulation needs a model with a coefficient form")
    backend = _accel.resolve(backend)
    d = model.dim
    burn = model.burn_in_default if burn_in is None else float(burn_in)
    n_burn = _step_count(burn, dt, "burn_in") if burn > 0 else 0
    n = n_burn + _step_count(T, dt)
    fine = 0.5 * dt
    rng = make_rng(seed)
    normals = rng.standard_normal((2 * n, d))
    jumps_on = model.has_jumps
    lam = model.levy.total_mass(d) if jumps_on else 0.0
    jumps = _step_jumps(model.levy, d, fine, 2 * n, rng, lam, 0.0) if jumps_on else np.zeros((2 * n, d))
    mean_jump = model.levy.mean_jump(d) if jumps_on else np.zeros(d)

    form = model.form
    kind = DRIFT_CODES[form.drift_kind]
    c = float(form.drift_param) if kind in (0, 1) else 0.0
    B = np.asarray(form.drift_param, float) if kind == 2 else np.zeros((d, d))
    A = np.ascontiguousarray(form.diffusion, float)
    G = np.ascontiguousarray(form.jump, float)

    paths = []
    for h, z, j, skip in (
        (fine, normals, jumps, 2 * n_burn),
        (dt, (normals[0::2] + normals[1::2]) / math.sqrt(2.0), jumps[0::2] + jumps[1::2], n_burn),
    ):
        x = np.zeros(d)
        out = np.empty((len(z) - skip, d))
        bad = euler_structured(backend, x, h, kind, c, B, A, G, np.ascontiguousarray(z), np.ascontiguousarray(j), mean_jump * h, out, skip)
        if bad >= 0:
            raise SimulationError(f"non-finite state at step {bad}", bad)
        paths.append(Trajectory(d, float(h), out, model.label, int(seed), burn))
    return paths[1], paths[0]


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def trajectory_bytes(traj):
    label = traj.model_label.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValueError("model label too long")
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, traj.dim, traj.n_steps, traj.dt, traj.seed & 0xFFFFFFFFFFFFFFFF, traj.burn_in)
    body = np.ascontiguousarray(traj.states, dtype="<f8").tobytes()
    return head + _LABEL_LEN.pack(len(label)) + label + body


def write_trajectory(traj, path):
    """Binary ``EJDT`` file: fixed header, label, row-major little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(trajectory_bytes(traj))


def trajectory_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise TrajectoryFormatError(
            f"truncated header: {len(buf)} of {_HEADER.size} bytes, missing {_HEADER.size - len(buf)} bytes"
        )
    magic, version, d, n, dt, seed, burn = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise TrajectoryFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise TrajectoryFormatError(f"unsupported format version {version}")
    if d == 0:
        raise TrajectoryFormatError("header declares dimension 0")
    if not dt > 0:
        raise TrajectoryFormatError(f"header declares non-positive dt {dt}")
    pos = _HEADER.size
    if len(buf) < pos + _LABEL_LEN.size:
        raise TrajectoryFormatError(f"truncated label length: missing {pos + _LABEL_LEN.size - len(buf)} bytes")
    (llen,) = _LABEL_LEN.unpack_from(buf, pos)
    pos += _LABEL_LEN.size
    if len(buf) < pos + llen:
        raise TrajectoryFormatError(f"truncated label: missing {pos + llen - len(buf)} bytes")
    label = bytes(buf[pos : pos + llen]).decode("utf-8")
    pos += llen
    need = n * d * 8
    have = len(buf) - pos
    if have < need:
        raise TrajectoryFormatError(f"truncated state block: expected {need} bytes, found {have}, missing {need - have} bytes")
    if have > need:
        raise TrajectoryFormatError(f"dimension mismatch: {have - need} unexpected trailing bytes for n={n}, d={d}")
    states = np.frombuffer(buf, dtype="<f8", count=n * d, offset=pos).reshape(n, d).astype(np.float64)
    return Trajectory(int(d), float(dt), states, label, int(seed), float(burn))


def read_trajectory(path):
    with open(path, "rb") as fh:
        return trajectory_from_bytes(fh.read())


def trajectory_csv(traj, path=None):
    """CSV export ``t, x1..xd`` for inspection."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{j + 1}" for j in range(traj.dim)])
    for t, row in zip(traj.times, traj.states):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


__all__ = [
    "Trajectory",
    "JumpBatch",
    "SimulationError",
    "TrajectoryFormatError",
    "levy_increments",
    "simulate_path",
    "simulate_chunks",
    "simulate_coupled",
    "write_trajectory",
    "read_trajectory",
    "trajectory_csv",
]
