"""Jump-diffusion model specifications, presets and numeric assumption checks.

A model is

    dX = b(X) dt + a(X) dW + gamma(X-) z  (compensated Poisson measure in dz)

with a Levy density ``F(z) = c |z|^{-d-alpha}`` restricted to the shell
``eps_trunc <= |z| <= R_trunc`` (or tapered by ``exp(-taper |z|)`` when
``R_trunc`` is infinite).
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special


class ModelConfigError(ValueError):
    """Model configuration is incomplete or inconsistent."""


class DimensionError(ModelConfigError):
    """Objects that must share a dimension do not."""


class QuadratureError(RuntimeError):
    """Jump-integral quadrature did not converge within its budget."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


def sphere_area(d):
    """Surface measure of the unit sphere in ``R^d`` (2 for ``d = 1``)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d):
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


# --------------------------------------------------------------------------
# Levy density
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LevySpec:
    """Truncated alpha-stable-type Levy density.

    ``symmetric=False`` keeps only the half space ``z_1 > 0``; the resulting
    nonzero mean ``m_F`` is compensated in the simulation.
    """

    alpha: float
    intensity_const: float = 0.1
    truncation_low: float = 1e-2
    truncation_high: float = 5.0
    symmetric: bool = True
    taper: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ModelConfigError(f"alpha must lie in (0, 2), got {self.alpha}")
        if not self.intensity_const > 0.0:
            raise ModelConfigError("intensity_const must be positive")
        if not self.truncation_low > 0.0:
            raise ModelConfigError("truncation_low must be positive")
        if not self.truncation_low < self.truncation_high:
            raise ModelConfigError("truncation_low must be below truncation_high")
        if self.alpha == 1.0 and not self.symmetric:
            raise ModelConfigError("alpha = 1 requires a symmetric Levy density")
        if math.isinf(self.truncation_high) and not self.taper > 0.0:
            raise ModelConfigError("an infinite truncation_high needs a positive taper")
        if self.taper < 0.0:
            raise ModelConfigError("taper must be nonnegative")

    @property
    def bounded(self):
        return math.isfinite(self.truncation_high)

    def direction_mass(self, d):
        """Measure of the set of jump directions."""
        s = sphere_area(d)
        return s if self.symmetric else 0.5 * s

    def radial(self, r):
        """``c r^{-1-alpha} taper(r)`` on the shell, zero elsewhere."""
        r = np.asarray(r, dtype=float)
        lo, hi = self.truncation_low, self.truncation_high
        inside = (r >= lo) & (r <= hi)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            val = self.intensity_const * r ** (-1.0 - self.alpha)
            if self.taper > 0.0:
                val = val * np.exp(-self.taper * r)
        return np.where(inside, val, 0.0)

    def density(self, z):
        """``F(z)`` for ``z`` of shape ``(..., d)``."""
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        r = np.linalg.norm(z, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(r > 0, self.radial(r) / np.where(r > 0, r, 1.0) ** (d - 1), 0.0)
        if not self.symmetric:
            val = np.where(z[..., 0] > 0.0, val, 0.0)
        return val

    def _radial_integral(self, power, growth=0.0):
        """``int r^power e^{growth r} c r^{-1-alpha} taper(r) dr`` over the shell."""
        lo, hi = self.truncation_low, self.truncation_high
        p = power - 1.0 - self.alpha
        rate = growth - self.taper
        c = self.intensity_const
        if rate == 0.0 and math.isfinite(hi):
            if p == -1.0:
                return c * math.log(hi / lo)
            return c * (hi ** (p + 1.0) - lo ** (p + 1.0)) / (p + 1.0)
        if not math.isfinite(hi) and rate >= 0.0:
            return math.inf

        def g(r):
            return c * r**p * math.exp(rate * r)

        if math.isfinite(hi):
            val, _ = integrate.quad(g, lo, hi, limit=200, epsabs=0.0, epsrel=1e-12)
        else:
            val, _ = integrate.quad(g, lo, math.inf, limit=200, epsabs=0.0, epsrel=1e-12)
        return val

    def total_mass(self, d):
        """``lambda = int F`` (finite thanks to the truncation)."""
        return self.direction_mass(d) * self._radial_integral(0.0)

    def mean_jump(self, d):
        """Compensation drift ``m_F = int z F(z) dz``; exactly zero if symmetric."""
        m = np.zeros(d)
        if self.symmetric:
            return m
        # int_{u_1 > 0} u_1 dS = volume of the unit ball in R^{d-1}
        m[0] = ball_volume(d - 1) * self._radial_integral(1.0)
        return m

    def second_moment(self, d):
        """``int |z|^2 F(z) dz``."""
        return self.direction_mass(d) * self._radial_integral(2.0)

    def exp_moment(self, d, eps):
        """``int |z|^2 e^{eps |z|} F(z) dz`` (may be infinite)."""
        return self.direction_mass(d) * self._radial_integral(2.0, growth=eps)

    def exp_threshold(self):
        """Supremum of the ``eps`` for which the exponential moment is finite."""
        return math.inf if self.bounded else self.taper

    def small_jump_variance(self, d):
        """Per-coordinate variance rate of the untruncated jumps below ``eps_trunc``.

        ``(1/d) int_{|z| < eps} |z|^2 c |z|^{-d-alpha} dz``, used by the optional
        Gaussian small-jump correction.
        """
        lo = self.truncation_low
        mass = self.direction_mass(d)
        return mass * self.intensity_const * lo ** (2.0 - self.alpha) / (2.0 - self.alpha) / d

    def sample_radii(self, rng, n):
        """Inverse-CDF draws from the radial density ``~ r^{-1-alpha}``."""
        a = self.alpha
        lo_p = self.truncation_low ** (-a)
        if self.bounded:
            hi_p = self.truncation_high ** (-a)
            u = rng.random(n)
            return (lo_p - u * (lo_p - hi_p)) ** (-1.0 / a)
        # Pareto proposal thinned by the exponential taper
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 16)
            u = rng.random(m)
            r = self.truncation_low * (1.0 - u) ** (-1.0 / a)
            keep = rng.random(m) < np.exp(-self.taper * (r - self.truncation_low))
            r = r[keep][: n - filled]
            out[filled : filled + len(r)] = r
            filled += len(r)
        return out

    def sample_directions(self, rng, n, d):
        """Unit vectors; symmetric specs get an explicit random sign."""
        g = rng.standard_normal((n, d))
        norm = np.linalg.norm(g, axis=1)
        norm[norm == 0.0] = 1.0
        u = g / norm[:, None]
        if self.symmetric:
            sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
            return u * sign[:, None]
        u[:, 0] = np.abs(u[:, 0])
        return u

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "intensity_const": self.intensity_const,
            "truncation_low": self.truncation_low,
            "truncation_high": self.truncation_high if self.bounded else "inf",
            "symmetric": self.symmetric,
            "taper": self.taper,
        }

    @classmethod
    def from_dict(cls, cfg):
        cfg = dict(cfg)
        if "truncation_high" in cfg:
            cfg["truncation_high"] = float(cfg["truncation_high"])
        unknown = set(cfg) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ModelConfigError(f"unknown Levy fields: {sorted(unknown)}")
        return cls(**cfg)


# --------------------------------------------------------------------------
# Coefficients
# --------------------------------------------------------------------------

DRIFT_KINDS = ("radial-pushback", "tanh", "linear", "zero")


@dataclass(frozen=True, eq=False)
class CoefficientForm:
    """Structured description of ``b``, ``a``, ``gamma`` (enables compiled paths).

    ``drift_kind`` is one of

    * ``radial-pushback``: ``b(x) = -C x / max(|x|, 1)``
    * ``tanh``: ``b(x)_i = -C tanh(x_i)``
    * ``linear``: ``b(x) = B x`` with ``drift_param`` the matrix ``B``
    * ``zero``: ``b = 0``

    ``a`` and ``gamma`` are constant matrices.
    """

    drift_kind: str
    drift_param: np.ndarray
    diffusion: np.ndarray
    jump: np.ndarray

    @property
    def dim(self):
        return self.diffusion.shape[0]

    def drift(self, x):
        x = np.asarray(x, dtype=float)
        k = self.drift_kind
        if k == "radial-pushback":
            c = float(self.drift_param)
            r = np.linalg.norm(x, axis=-1, keepdims=True)
            return -c * x / np.maximum(r, 1.0)
        if k == "tanh":
            return -float(self.drift_param) * np.tanh(x)
        if k == "linear":
            return x @ self.drift_param.T
        return np.zeros_like(x)

    def diffusion_at(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.diffusion, x.shape[:-1] + self.diffusion.shape).copy()

    def jump_at(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.jump, x.shape[:-1] + self.jump.shape).copy()

    def to_dict(self):
        param = self.drift_param
        return {
            "drift": {
                "type": self.drift_kind,
                "param": param.tolist() if isinstance(param, np.ndarray) else float(param),
            },
            "diffusion": self.diffusion.tolist(),
            "jump": self.jump.tolist(),
        }


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients, Levy density and declared constants of one model.

    ``constants`` holds the numbers the validators compare against: the drift
    bound, the ellipticity constant ``c``, a Lipschitz bound, ``rho_tilde``
    and ``C_tilde`` of the drift condition, ``gamma_max``, a floor for the
    smallest singular value of ``gamma``, the tail constant of ``F`` and the
    ``eps`` used for the exponential moment.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    jump_coeff: Callable
    levy: LevySpec
    label: str = "custom"
    constants: dict = field(default_factory=dict)
    form: Optional[CoefficientForm] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ModelConfigError("dim must be at least 1")

    @property
    def has_jumps(self):
        if self.form is not None:
            return bool(np.any(self.form.jump != 0.0))
        return True

    @property
    def burn_in_default(self):
        c = self.constants.get("C_tilde")
        return max(50.0, 5.0 / c) if c and c > 0 else 50.0

    def to_dict(self):
        out = {"label": self.label, "dim": self.dim, "levy": self.levy.to_dict()}
        out["constants"] = dict(self.constants)
        if self.params:
            out["params"] = dict(self.params)
        if self.form is not None:
            out.update(self.form.to_dict())
        return out


def _as_matrix(value, d, what):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise DimensionError(f"{what} has shape {arr.shape}, expected {(d, d)}")
    return arr


def _ellipticity_constant(a):
    s = np.linalg.eigvalsh(0.5 * (a + a.T))
    if s[0] <= 0.0:
        raise ModelConfigError(
            "diffusion matrix is not uniformly elliptic (smallest eigenvalue "
            f"{s[0]:.3g}); the ellipticity band c^-1 I <= a <= c I cannot hold"
        )
    return max(1.0, float(s[-1]), 1.0 / float(s[0]))


def model_from_form(form, levy, label="custom", constants=None, params=None):
    """Build a :class:`ModelSpec` from structured coefficients."""
    d = form.dim
    for name, mat in (("diffusion", form.diffusion), ("jump", form.jump)):
        if mat.shape != (d, d):
            raise ModelConfigError(f"{name} matrix shape {mat.shape} does not match dim {d}")
    if form.drift_kind == "linear" and np.shape(form.drift_param) != (d, d):
        raise ModelConfigError("linear drift matrix does not match dim")
    if form.drift_kind not in DRIFT_KINDS:
        raise ModelConfigError(f"unknown drift type {form.drift_kind!r}")
    c_ell = _ellipticity_constant(form.diffusion)

    consts = {
        "ellipticity": c_ell,
        "tail_const": levy.intensity_const,
        "exp_moment_eps": 0.1,
        "jump_floor": 1e-8,
    }
    sv = np.linalg.svd(form.jump, compute_uv=False)
    consts["gamma_max"] = float(sv[0])
    lip = 0.0
    if form.drift_kind in ("radial-pushback", "tanh"):
        cdr = float(form.drift_param)
        consts["drift_bound"] = abs(cdr) * (1.0 if form.drift_kind == "radial-pushback" else math.sqrt(d))
        lip = abs(cdr)
        if cdr != 0:
            # declared from |C| so a sign-flipped drift is measured, not skipped
            consts["rho_tilde"] = 1.0
            if form.drift_kind == "radial-pushback":
                consts["C_tilde"] = abs(cdr)
            else:
                # the largest coordinate carries at least |x| / sqrt(d)
                consts["C_tilde"] = abs(cdr) * math.tanh(1.0 / math.sqrt(d)) / math.sqrt(d)
    elif form.drift_kind == "linear":
        lip = float(np.linalg.norm(form.drift_param, 2))
        consts["drift_bound"] = math.inf
    else:
        consts["drift_bound"] = 0.0
    consts["lipschitz"] = lip
    if constants:
        consts.update(constants)
    return ModelSpec(
        dim=d,
        drift=form.drift,
        diffusion=form.diffusion_at,
        jump_coeff=form.jump_at,
        levy=levy,
        label=label,
        constants=consts,
        form=form,
        params=dict(params or {}),
    )


# --------------------------------------------------------------------------
# Presets
# --------------------------------------------------------------------------

_RADIAL_DEFAULTS = {
    "C": 1.0,
    "sigma": 1.0,
    "gamma0": 0.5,
    "alpha": 0.5,
    "intensity_const": 0.1,
    "truncation_low": 1e-2,
    "truncation_high": 5.0,
    "symmetric": True,
    "taper": 0.0,
}
_SMOOTH_DEFAULTS = dict(_RADIAL_DEFAULTS)

PRESET_NAMES = ("radial-pushback-1", "radial-pushback-2", "radial-pushback-3", "smooth-1d")
_LEVY_KEYS = ("alpha", "intensity_const", "truncation_low", "truncation_high", "symmetric", "taper")


def _levy_from_params(p):
    return LevySpec(**{k: p[k] for k in _LEVY_KEYS})


def _preset(name, overrides):
    m = re.fullmatch(r"radial-pushback-(\d+)", name)
    if m:
        d = int(m.group(1))
        if d < 1:
            raise ModelConfigError("radial-pushback needs d >= 1")
        p = dict(_RADIAL_DEFAULTS)
        kind = "radial-pushback"
    elif name == "smooth-1d":
        d = 1
        p = dict(_SMOOTH_DEFAULTS)
        kind = "tanh"
    else:
        raise ModelConfigError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)} (any d for radial-pushback-d)")
    unknown = set(overrides) - set(p)
    if unknown:
        raise ModelConfigError(f"unknown preset parameters: {sorted(unknown)}")
    p.update(overrides)
    form = CoefficientForm(
        drift_kind=kind,
        drift_param=np.float64(p["C"]),
        diffusion=float(p["sigma"]) * np.eye(d),
        jump=float(p["gamma0"]) * np.eye(d),
    )
    return model_from_form(form, _levy_from_params(p), label=name, params=p)


def build_model(preset_or_config, **overrides):
    """Return a :class:`ModelSpec` from a preset name or a config mapping.

    Presets: ``radial-pushback-<d>`` (``b = -C x / max(|x|, 1)``,
    ``a = sigma I``, ``gamma = gamma0 I``) and ``smooth-1d``
    (``b = -C tanh(x)``). Keyword overrides change preset parameters, e.g.
    ``build_model("smooth-1d", gamma0=0.0)`` for the continuous variant.
    """
    if isinstance(preset_or_config, str):
        return _preset(preset_or_config, overrides)
    if isinstance(preset_or_config, dict):
        cfg = copy.deepcopy(preset_or_config)
        if "preset" in cfg:
            params = dict(cfg.get("params", {}))
            params.update(overrides)
            return _preset(cfg["preset"], params)
        if overrides:
            raise ModelConfigError("overrides only apply to presets")
        return model_from_config(cfg)
    raise ModelConfigError("expected a preset name or a config mapping")


def model_from_config(cfg):
    """Inline model config (see README for the schema)."""
    required = ("dim", "drift", "diffusion", "jump", "levy")
    missing = [k for k in required if k not in cfg]
    if missing:
        raise ModelConfigError(f"model config lacks fields: {missing}")
    d = int(cfg["dim"])
    if d < 1:
        raise ModelConfigError("dim must be at least 1")
    drift = cfg["drift"]
    if isinstance(drift, str):
        drift = {"type": drift}
    kind = drift.get("type")
    if kind not in DRIFT_KINDS:
        raise ModelConfigError(f"unknown drift type {kind!r}")
    if kind == "linear":
        param = _as_matrix(drift.get("param", drift.get("matrix")), d, "drift matrix")
    elif kind == "zero":
        param = np.float64(0.0)
    else:
        param = np.float64(drift.get("param", drift.get("C", 1.0)))
    form = CoefficientForm(
        drift_kind=kind,
        drift_param=param,
        diffusion=_as_matrix(cfg["diffusion"], d, "diffusion"),
        jump=_as_matrix(cfg["jump"], d, "jump"),
    )
    levy = LevySpec.from_dict(cfg["levy"])
    return model_from_form(
        form, levy, label=cfg.get("label", "custom"), constants=cfg.get("constants")
    )


def load_model_config(path):
    with open(path) as fh:
        return build_model(json.load(fh))


def continuous_stationary_density_1d(model):
    """Invariant density of a jump-free 1-d model: ``mu ~ exp(2 int b / a^2)``.

    Closed form for the ``tanh`` drift with constant ``a = sigma``:
    ``mu ~ cosh(x)^{-2C/sigma^2}``.
    """
    if model.dim != 1 or model.has_jumps:
        raise ModelConfigError("closed-form density needs a jump-free one-dimensional model")
    form = model.form
    if form is None or form.drift_kind != "tanh":
        raise ModelConfigError("closed-form density is available for the tanh drift only")
    c = float(form.drift_param)
    sigma2 = float(form.diffusion[0, 0]) ** 2
    p = 2.0 * c / sigma2
    if p <= 0:
        raise ModelConfigError("drift does not confine the process")
    # int cosh^{-p} = B(1/2, p/2)
    norm = special.beta(0.5, 0.5 * p)

    def mu(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-p * (np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x))) - math.log(2.0))) / norm

    return mu


# --------------------------------------------------------------------------
# Assumption checks
# --------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    violation: float
    tolerance: float
    worst_point: Optional[list] = None
    n_evaluated: int = 0
    value: Optional[float] = None
    note: str = ""

    def to_dict(self):
        def clean(v):
            if v is None:
                return None
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            return v

        return {
            "name": self.name,
            "passed": self.passed,
            "violation": clean(float(self.violation)),
            "tolerance": self.tolerance,
            "worst_point": self.worst_point,
            "n_evaluated": self.n_evaluated,
            "value": clean(None if self.value is None else float(self.value)),
            "note": self.note,
        }


@dataclass
class AssumptionReport:
    model_label: str
    checks: dict
    n_probes: int
    truncation: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def failed(self):
        return [name for name, c in self.checks.items() if not c.passed]

    def to_dict(self):
        return {
            "model_label": self.model_label,
            "passed": self.passed,
            "n_probes": self.n_probes,
            "truncation": self.truncation,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


DEFAULT_TOLERANCE = 1e-8

CHECK_NAMES = (
    "A1.finite",
    "A1.drift_bounded",
    "A1.ellipticity",
    "A1.lipschitz",
    "A2.drift_condition",
    "A3.2.tail_bound",
    "A3.3.jump_bounded",
    "A3.3.jump_invertible",
    "A3.4.symmetry",
    "A3.5.exp_moment",
)


def default_probes(d, n=1000, radius=10.0, seed=0):
    """Uniform points in the ball of the given radius."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return g * r[:, None]


def _eval_rows(fn, pts, shape):
    out = np.empty((len(pts),) + shape)
    for i, x in enumerate(pts):
        out[i] = np.asarray(fn(x), dtype=float).reshape(shape)
    return out


def _worst(viol, pts):
    i = int(np.argmax(viol))
    return float(viol[i]), pts[i].tolist()


def check_assumptions(model, probe_points=None, tolerances=None, seed=0, fd_step=1e-4):
    """Evaluate A1-A3 numerically at the probe points; failures are reported.

    Lipschitz constants are sampled (finite differences along random
    directions), not proven.
    """
    d = model.dim
    pts = default_probes(d, seed=seed) if probe_points is None else np.atleast_2d(np.asarray(probe_points, float))
    if pts.size == 0:
        raise ValueError("probe_points must be nonempty")
    if pts.shape[1] != d:
        raise DimensionError(f"probe points have dimension {pts.shape[1]}, model has {d}")
    tol = {name: DEFAULT_TOLERANCE for name in CHECK_NAMES}
    if tolerances:
        for k, v in tolerances.items():
            if not v > 0:
                raise ValueError("tolerances must be positive")
            tol[k] = float(v)
    K = model.constants
    n = len(pts)
    checks = {}

    b = _eval_rows(model.drift, pts, (d,))
    a = _eval_rows(model.diffusion, pts, (d, d))
    g = _eval_rows(model.jump_coeff, pts, (d, d))
    finite = np.isfinite(b).all(axis=1) & np.isfinite(a).all(axis=(1, 2)) & np.isfinite(g).all(axis=(1, 2))
    if not finite.all():
        i = int(np.flatnonzero(~finite)[0])
        checks["A1.finite"] = CheckResult(
            "A1.finite", False, math.inf, tol["A1.finite"], pts[i].tolist(), n, note="non-finite coefficient value"
        )
        b = np.nan_to_num(b, nan=np.inf)
    else:
        checks["A1.finite"] = CheckResult("A1.finite", True, 0.0, tol["A1.finite"], None, n)

    # A1: bounded drift
    bound = K.get("drift_bound", math.inf)
    bn = np.linalg.norm(b, axis=1)
    v, wp = _worst(np.maximum(bn - bound, 0.0), pts)
    checks["A1.drift_bounded"] = CheckResult(
        "A1.drift_bounded", v <= tol["A1.drift_bounded"], v, tol["A1.drift_bounded"], wp, n,
        value=float(bn.max()), note=f"declared bound {bound}",
    )

    # A1: symmetric a with spectrum in [1/c, c]
    c_ell = K.get("ellipticity", 1.0)
    asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2))
    ev = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))
    viol = np.maximum.reduce([asym, np.maximum(1.0 / c_ell - ev[:, 0], 0.0), np.maximum(ev[:, -1] - c_ell, 0.0)])
    v, wp = _worst(viol, pts)
    checks["A1.ellipticity"] = CheckResult(
        "A1.ellipticity", v <= tol["A1.ellipticity"], v, tol["A1.ellipticity"], wp, n,
        value=float(ev[:, 0].min()), note=f"c = {c_ell}",
    )

    # A1: sampled Lipschitz constants
    lip = K.get("lipschitz", math.inf)
    rng = np.random.default_rng(seed + 1)
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    y = pts + fd_step * u
    slopes = np.zeros(n)
    for fn, base, shape in ((model.drift, b, (d,)), (model.diffusion, a, (d, d)), (model.jump_coeff, g, (d, d))):
        moved = _eval_rows(fn, y, shape)
        diff = (moved - base).reshape(n, -1)
        # Frobenius for matrices, Euclidean for vectors
        slopes = np.maximum(slopes, np.linalg.norm(diff, axis=1) / fd_step)
    v, wp = _worst(np.maximum(slopes - lip, 0.0), pts)
    checks["A1.lipschitz"] = CheckResult(
        "A1.lipschitz", v <= tol["A1.lipschitz"], v, tol["A1.lipschitz"], wp, n,
        value=float(slopes.max()), note=f"sampled finite differences, declared L = {lip}",
    )

    # A2: <x, b(x)> <= -C |x| for |x| >= rho
    rho = K.get("rho_tilde")
    ct = K.get("C_tilde")
    if rho is None or ct is None:
        checks["A2.drift_condition"] = CheckResult(
            "A2.drift_condition", False, math.inf, tol["A2.drift_condition"], None, 0,
            note="rho_tilde / C_tilde not declared",
        )
    else:
        r = np.linalg.norm(pts, axis=1)
        far = r >= rho
        inner = np.einsum("ij,ij->i", pts, b)
        viol = np.where(far, np.maximum(inner + ct * r, 0.0), 0.0)
        v, wp = _worst(viol, pts)
        checks["A2.drift_condition"] = CheckResult(
            "A2.drift_condition", v <= tol["A2.drift_condition"], v, tol["A2.drift_condition"],
            wp if v > 0 else None, int(far.sum()),
            value=float(np.max(np.where(far, inner, -np.inf))) if far.any() else None,
            note=f"rho_tilde = {rho}, C_tilde = {ct}",
        )

    checks.update(_levy_checks(model, tol))

    # A3.3: bounded, invertible gamma
    sv = np.linalg.svd(g, compute_uv=False)
    gmax = K.get("gamma_max", math.inf)
    v, wp = _worst(np.maximum(sv[:, 0] - gmax, 0.0), pts)
    checks["A3.3.jump_bounded"] = CheckResult(
        "A3.3.jump_bounded", v <= tol["A3.3.jump_bounded"], v, tol["A3.3.jump_bounded"], wp, n,
        value=float(sv[:, 0].max()),
    )
    floor = K.get("jump_floor", 1e-8)
    smin = sv[:, -1]
    viol = np.maximum(1.0 - smin / floor, 0.0)
    v, wp = _worst(viol, pts)
    checks["A3.3.jump_invertible"] = CheckResult(
        "A3.3.jump_invertible", v <= tol["A3.3.jump_invertible"], v, tol["A3.3.jump_invertible"], wp, n,
        value=float(smin.min()), note=f"relative shortfall of the smallest singular value below {floor}",
    )

    order = [name for name in CHECK_NAMES if name in checks]
    return AssumptionReport(
        model_label=model.label,
        checks={name: checks[name] for name in order},
        n_probes=n,
        truncation={
            "truncation_low": model.levy.truncation_low,
            "truncation_high": model.levy.truncation_high if model.levy.bounded else "inf",
            "taper": model.levy.taper,
            "note": "F is truncated; supp(F) = R^d holds only in the limit",
        },
    )


def _levy_checks(model, tol):
    d = model.dim
    lv = model.levy
    out = {}
    # A3.2: F(z) |z|^{d+alpha} <= c on a radial grid along random directions
    c_tail = model.constants.get("tail_const", lv.intensity_const)
    hi = lv.truncation_high if lv.bounded else 50.0 / max(lv.taper, 1e-12)
    r = np.geomspace(lv.truncation_low * 0.5, hi * 2.0, 400)
    dirs = default_probes(d, n=16, radius=1.0, seed=7)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if not lv.symmetric:
        dirs[:, 0] = np.abs(dirs[:, 0]) + 1e-3
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    z = dirs[:, None, :] * r[None, :, None]
    scaled = lv.density(z) * r[None, :] ** (d + lv.alpha)
    viol = np.maximum(scaled - c_tail, 0.0)
    i = np.unravel_index(int(np.argmax(viol)), viol.shape)
    out["A3.2.tail_bound"] = CheckResult(
        "A3.2.tail_bound", bool(viol[i] <= tol["A3.2.tail_bound"]), float(viol[i]), tol["A3.2.tail_bound"],
        z[i].tolist() if viol[i] > 0 else None, int(viol.size), value=float(scaled.max()),
        note=f"c = {c_tail}; radial grid [{r[0]:.3g}, {r[-1]:.3g}]",
    )

    # A3.4: zero first moment on shells when alpha = 1
    if lv.alpha == 1.0:
        dirs_q, w_q = sphere_rule(d, 12, hemisphere=not lv.symmetric)
        direction_mean = float(np.linalg.norm(w_q @ dirs_q))
        worst = 0.0
        for lo_s, hi_s in ((lv.truncation_low, 1.0), (0.5, 2.0), (lv.truncation_low, hi)):
            lo_s, hi_s = max(lo_s, lv.truncation_low), min(hi_s, hi)
            radial_mass, _ = integrate.quad(lambda s: float(lv.radial(s)) * s, lo_s, hi_s)
            worst = max(worst, radial_mass * direction_mean)
        out["A3.4.symmetry"] = CheckResult(
            "A3.4.symmetry", worst <= tol["A3.4.symmetry"], worst, tol["A3.4.symmetry"], None, 3,
            note="|int_{r<|z|<R} z F(z) dz| on three shells",
        )
    else:
        out["A3.4.symmetry"] = CheckResult(
            "A3.4.symmetry", True, 0.0, tol["A3.4.symmetry"], None, 0, note="not applicable (alpha != 1)",
        )

    # A3.5: exponential moment
    eps = model.constants.get("exp_moment_eps", 0.1)
    val = lv.exp_moment(d, eps)
    bound = model.constants.get("exp_moment_bound", math.inf)
    finite = math.isfinite(val)
    viol = math.inf if not finite else max(val - bound, 0.0)
    out["A3.5.exp_moment"] = CheckResult(
        "A3.5.exp_moment", finite and viol <= tol["A3.5.exp_moment"], viol, tol["A3.5.exp_moment"], None, 1,
        value=val, note=f"eps = {eps}, quadrature over the truncated support",
    )
    return out


# --------------------------------------------------------------------------
# Generator and Lyapunov probe
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature budget for the jump part of the generator."""

    radial_panels: int = 48
    radial_nodes: int = 12
    angular_nodes: int = 16
    rtol: float = 1e-7
    atol: float = 1e-10
    tail_scale: float = 40.0


def sphere_rule(d, n, hemisphere=False):
    """Product rule on the unit sphere ``S^{d-1}`` (weights sum to its area).

    Recursive in the polar angle ``theta`` of the first coordinate with
    weight ``sin^{d-2}(theta)``; Gauss-Legendre in ``theta``. Symmetric under
    ``u -> -u`` for the full sphere. ``hemisphere`` keeps ``u_1 > 0``.
    """
    if d == 1:
        if hemisphere:
            return np.array([[1.0]]), np.array([1.0])
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    t, w = np.polynomial.legendre.leggauss(n)
    top = 0.5 * math.pi if hemisphere else math.pi
    theta = 0.5 * top * (t + 1.0)
    wt = 0.5 * top * w * np.sin(theta) ** (d - 2)
    sub, sw = sphere_rule(d - 1, n)
    dirs = np.empty((len(theta) * len(sub), d))
    wts = np.empty(len(theta) * len(sub))
    k = 0
    for th, wth in zip(theta, wt):
        m = len(sub)
        dirs[k : k + m, 0] = math.cos(th)
        dirs[k : k + m, 1:] = math.sin(th) * sub
        wts[k : k + m] = wth * sw
        k += m
    return dirs, wts


def _radial_rule(lv, panels, nodes, tail_scale, growth=0.0):
    lo = lv.truncation_low
    if lv.bounded:
        hi = lv.truncation_high
    else:
        rate = lv.taper - growth
        hi = lo + tail_scale / max(rate, 1e-3 * lv.taper)
    edges = np.linspace(math.log(lo), math.log(hi), panels + 1)
    t, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1], edges[1:]
    s = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * t
    ws = (0.5 * (b - a))[:, None] * w
    r = np.exp(s).ravel()
    wr = (ws.ravel() * r) * lv.radial(r)
    return r, wr


def _fd_grad(f, x, step):
    d = len(x)
    e = np.eye(d) * step
    pts = np.concatenate([x + e, x - e])
    v = np.asarray(f(pts), dtype=float)
    return (v[:d] - v[d:]) / (2.0 * step)


def _fd_hess(f, x, step):
    d = len(x)
    H = np.empty((d, d))
    f0 = float(np.asarray(f(x[None, :]))[0])
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = step
            ej[j] = step
            if i == j:
                v = np.asarray(f(np.stack([x + ei, x - ei])), dtype=float)
                H[i, i] = (v[0] - 2.0 * f0 + v[1]) / step**2
            else:
                v = np.asarray(f(np.stack([x + ei + ej, x + ei - ej, x - ei + ej, x - ei - ej])), dtype=float)
                H[i, j] = H[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4.0 * step**2)
    return H


def _jump_integral(model, f, x, grad, quad, panels, growth=0.0):
    d = model.dim
    lv = model.levy
    dirs, wd = sphere_rule(d, quad.angular_nodes, hemisphere=not lv.symmetric)
    r, wr = _radial_rule(lv, panels, quad.radial_nodes, quad.tail_scale, growth)
    gam = np.asarray(model.jump_coeff(x), dtype=float).reshape(d, d)
    gd = dirs @ gam.T  # gamma(x) u for every direction
    f0 = float(np.asarray(f(x[None, :]))[0])
    lin = gd @ grad
    total = 0.0
    # loop over radii keeps memory flat; vectorised over directions
    for rk, wk in zip(r, wr):
        if wk == 0.0:
            continue
        jumped = x[None, :] + rk * gd
        vals = np.asarray(f(jumped), dtype=float) - f0 - rk * lin
        total += wk * float(vals @ wd)
    return total


def generator_apply(model, f, x, grad=None, hess=None, quad=None, fd_step=1e-5, hess_step=1e-3, return_parts=False):
    """``A f(x) = A_c f(x) + A_d f(x)`` for a scalar ``f`` on ``R^d``.

    ``f`` maps an ``(m, d)`` array to ``(m,)``. ``grad`` / ``hess`` are
    callables of ``x``; when absent they come from central differences
    (step ``fd_step`` for the gradient, ``hess_step`` for the Hessian).

    Raises :class:`QuadratureError` if halving the radial panels changes the
    jump integral by more than the configured tolerance.
    """
    quad = quad or QuadConfig()
    x = np.asarray(x, dtype=float).reshape(-1)
    d = model.dim
    gvec = np.asarray(grad(x), float) if grad is not None else _fd_grad(f, x, fd_step)
    H = np.asarray(hess(x), float) if hess is not None else _fd_hess(f, x, hess_step)
    a = np.asarray(model.diffusion(x), dtype=float).reshape(d, d)
    b = np.asarray(model.drift(x), dtype=float).reshape(d)
    cont = 0.5 * float(np.sum((a @ a.T) * H)) + float(b @ gvec)

    fine = _jump_integral(model, f, x, gvec, quad, quad.radial_panels)
    coarse = _jump_integral(model, f, x, gvec, quad, max(quad.radial_panels // 2, 1))
    residual = abs(fine - coarse)
    if not np.isfinite(fine) or residual > quad.rtol * abs(fine) + quad.atol:
        raise QuadratureError(
            f"jump integral did not converge (value {fine:.6g}, residual {residual:.3g})", residual
        )
    if return_parts:
        return cont + fine, cont, fine
    return cont + fine


@dataclass
class LyapunovReport:
    eps: float
    radii: list
    directions: list
    ratios: list  # ratios[i][k] for direction i, radius k
    threshold_radius: Optional[float]
    c1: Optional[float]

    @property
    def confining(self):
        return self.threshold_radius is not None

    def to_dict(self):
        return {
            "eps": self.eps,
            "radii": self.radii,
            "directions": self.directions,
            "ratios": self.ratios,
            "threshold_radius": self.threshold_radius,
            "c1": self.c1,
        }


def lyapunov_probe(model, eps, radii, n_directions=4, quad=None, seed=0):
    """Evaluate ``A f*(x) / f*(x)`` for ``f*(x) = exp(eps |x|)`` along rays.

    Reports the smallest tested radius ``R0`` beyond which every ratio is
    negative, together with ``c1 = -max ratio`` over that range; both are
    ``None`` when no such radius exists.
    """
    d = model.dim
    lv = model.levy
    gmax = model.constants.get("gamma_max")
    if gmax is None:
        gmax = float(np.linalg.norm(np.asarray(model.jump_coeff(np.zeros(d))).reshape(d, d), 2))
    if not lv.bounded and eps * gmax >= lv.taper:
        raise QuadratureError(
            f"jump integral of exp(eps|x + gamma z|) diverges: eps * gamma_max = {eps * gmax:.3g} "
            f">= taper {lv.taper:.3g}",
            math.inf,
        )
    radii = sorted(float(r) for r in radii)
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    dirs = list(np.eye(d)[: min(d, n_directions)])
    rng = np.random.default_rng(seed)
    while len(dirs) < n_directions:
        u = rng.standard_normal(d)
        dirs.append(u / np.linalg.norm(u))

    def f(y):
        return np.exp(eps * np.linalg.norm(np.atleast_2d(y), axis=-1))

    def grad(x):
        r = np.linalg.norm(x)
        return eps * math.exp(eps * r) * x / r

    def hess(x):
        r = np.linalg.norm(x)
        e = math.exp(eps * r)
        return eps * e * (np.outer(x, x) / r**2 * (eps - 1.0 / r) + np.eye(len(x)) / r)

    ratios = []
    for u in dirs:
        row = []
        for r in radii:
            x = r * u
            val = generator_apply(model, f, x, grad=grad, hess=hess, quad=quad)
            row.append(val / math.exp(eps * r))
        ratios.append(row)
    arr = np.asarray(ratios)
    worst = arr.max(axis=0)
    threshold = None
    c1 = None
    neg = worst < 0.0
    if neg[-1]:
        k = len(radii) - 1
        while k > 0 and neg[k - 1]:
            k -= 1
        threshold = radii[k]
        c1 = float(-worst[k:].max())
    return LyapunovReport(
        eps=eps,
        radii=radii,
        directions=[list(map(float, u)) for u in dirs],
        ratios=arr.tolist(),
        threshold_radius=threshold,
        c1=c1,
    )


__all__ = [
    "LevySpec",
    "CoefficientForm",
    "ModelSpec",
    "ModelConfigError",
    "QuadratureError",
    "AssumptionReport",
    "CheckResult",
    "QuadConfig",
    "PRESET_NAMES",
    "build_model",
    "model_from_config",
    "load_model_config",
    "check_assumptions",
    "default_probes",
    "generator_apply",
    "lyapunov_probe",
    "sphere_rule",
    "sphere_area",
    "continuous_stationary_density_1d",
]
