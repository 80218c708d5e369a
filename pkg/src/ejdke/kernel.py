"""Compactly supported polynomial kernels with vanishing moments.

The order-``M`` kernel is the minimal-degree polynomial on ``[-1, 1]`` with
``int K = 1`` and ``int x^l K(x) dx = 0`` for ``l = 1..M``. It is the
reproducing kernel of polynomials of degree ``<= M`` at the origin, i.e.

    K(x) = sum_{j=0}^{M} (2j + 1)/2 * P_j(0) * P_j(x),    |x| <= 1,

with ``P_j`` the Legendre polynomials. Odd terms vanish because ``P_j(0) = 0``
for odd ``j``, so ``K`` is even.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly


def gauss_legendre(n):
    """Nodes and weights of the ``n``-point rule on ``[-1, 1]``."""
    return npleg.leggauss(int(n))


@dataclass(frozen=True, eq=False)
class Kernel:
    """Univariate kernel supported on ``[-1, 1]``.

    Attributes
    ----------
    order : int
        Number ``M`` of vanishing moments beyond the normalisation.
    legendre : ndarray
        Coefficients in the Legendre basis.
    coeffs : ndarray
        Power-basis coefficients, lowest degree first.
    sup_norm : float
        ``max |K|`` over the support.
    """

    order: int
    legendre: np.ndarray
    coeffs: np.ndarray
    sup_norm: float
    _roots: np.ndarray = field(repr=False)

    @property
    def degree(self):
        return len(self.coeffs) - 1

    @property
    def gauss_points(self):
        """Gauss-Legendre size that integrates ``K(.) * K(.)`` exactly."""
        return self.degree + 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        val = nppoly.polyval(x, self.coeffs)
        return np.where(np.abs(x) <= 1.0, val, 0.0)

    def scaled(self, x, h):
        """``K_h(x) = K(x / h) / h``."""
        return self(np.asarray(x, dtype=float) / h) / h

    def primitive(self, x):
        """``int_{-1}^{x} K(u) du`` (0 left of the support, 1 right of it)."""
        x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
        anti = nppoly.polyint(self.coeffs)
        return nppoly.polyval(x, anti) - nppoly.polyval(-1.0, anti)

    def moment(self, l):
        """Exact ``int x^l K(x) dx``."""
        prod = nppoly.polymul(self.coeffs, np.r_[np.zeros(l), 1.0])
        anti = nppoly.polyint(prod)
        return float(nppoly.polyval(1.0, anti) - nppoly.polyval(-1.0, anti))

    @property
    def l1_norm(self):
        """Exact ``int |K|`` using the sign changes inside ``[-1, 1]``."""
        anti = nppoly.polyint(self.coeffs)
        knots = np.concatenate(([-1.0], self._roots, [1.0]))
        total = 0.0
        for a, b in zip(knots[:-1], knots[1:]):
            total += abs(nppoly.polyval(b, anti) - nppoly.polyval(a, anti))
        return float(total)

    @property
    def total_variation(self):
        """Total variation of ``K`` on ``R``, counting the jumps at ``+-1``."""
        deriv = nppoly.polyder(self.coeffs)
        crit = nppoly.polyroots(deriv) if len(deriv) > 1 else np.array([])
        if len(crit):
            crit = np.real(crit[np.abs(np.imag(crit)) < 1e-12])
            crit = np.sort(crit[(crit > -1.0) & (crit < 1.0)])
        knots = np.concatenate(([-1.0], crit, [1.0]))
        inner = np.sum(np.abs(np.diff(nppoly.polyval(knots, self.coeffs))))
        edges = abs(nppoly.polyval(-1.0, self.coeffs)) + abs(nppoly.polyval(1.0, self.coeffs))
        return float(inner + edges)

    def to_dict(self):
        return {
            "order": self.order,
            "legendre": self.legendre.tolist(),
            "coeffs": self.coeffs.tolist(),
            "sup_norm": self.sup_norm,
            "l1_norm": self.l1_norm,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def build_kernel(M):
    """Order-``M`` kernel built from the first ``M + 1`` Legendre polynomials.

    ``M = 0`` and ``M = 1`` both give the box kernel ``1/2``; from ``M = 2``
    on the kernel dips below zero.
    """
    M = int(M)
    if M < 0:
        raise ValueError("kernel order M must be nonnegative")
    leg = np.zeros(M + 1)
    for j in range(M + 1):
        e = np.zeros(j + 1)
        e[j] = 1.0
        leg[j] = (2 * j + 1) / 2.0 * npleg.legval(0.0, e)
    # odd j contribute nothing; drop the trailing zero
    last = np.flatnonzero(leg)[-1]
    leg = leg[: last + 1]
    coeffs = npleg.leg2poly(leg)

    deriv = nppoly.polyder(coeffs)
    crit = nppoly.polyroots(deriv) if len(deriv) > 1 else np.array([])
    crit = np.real(crit[np.abs(np.imag(crit)) < 1e-12]) if len(crit) else crit
    crit = crit[(crit >= -1.0) & (crit <= 1.0)] if len(crit) else crit
    probe = np.concatenate(([-1.0, 0.0, 1.0], crit))
    sup = float(np.max(np.abs(nppoly.polyval(probe, coeffs))))

    roots = nppoly.polyroots(coeffs) if len(coeffs) > 1 else np.array([])
    if len(roots):
        roots = np.real(roots[np.abs(np.imag(roots)) < 1e-12])
        roots = np.sort(roots[(roots > -1.0) & (roots < 1.0)])
    return Kernel(order=M, legendre=leg, coeffs=coeffs, sup_norm=sup, _roots=roots)


@dataclass(frozen=True, eq=False)
class ProductKernel:
    """``K_h(y) = prod_l K(y_l / h_l) / h_l`` on ``R^d``."""

    base: Kernel
    bandwidths: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.bandwidths, dtype=float))
        check_bandwidth(h)
        object.__setattr__(self, "bandwidths", h)

    @property
    def dim(self):
        return len(self.bandwidths)

    @property
    def sup_norm(self):
        return self.base.sup_norm ** self.dim / float(np.prod(self.bandwidths))

    @property
    def l1_norm(self):
        # scale invariant: each factor integrates |K_h| to ||K||_1
        return self.base.l1_norm ** self.dim

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.ones(y.shape[:-1])
        for l, hl in enumerate(self.bandwidths):
            out = out * self.base.scaled(y[..., l], hl)
        return out


def check_bandwidth(h):
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(~np.isfinite(h)) or np.any(h <= 0.0):
        raise ValueError(f"bandwidths must be positive, got {h.tolist()}")
    if np.any(h > 1.0):
        raise ValueError(f"bandwidths must lie in (0, 1], got {h.tolist()}")
    return h


def convolve_1d(kernel, h, eta, x):
    """``(K_h * K_eta)(x) = int K_h(u - x) K_eta(u) du`` evaluated exactly.

    The integrand is a polynomial of degree ``2 * deg K`` on the overlap of
    the two supports, so a Gauss-Legendre rule of ``deg K + 1`` points on
    that overlap integrates it without error beyond rounding.
    """
    x = np.asarray(x, dtype=float)
    lo = np.maximum(-eta, x - h)
    hi = np.minimum(eta, x + h)
    t, w = gauss_legendre(kernel.gauss_points)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[..., None] + half[..., None] * t
    vals = kernel.scaled(u - x[..., None], h) * kernel.scaled(u, eta)
    out = half * (vals @ w)
    return np.where(hi > lo, out, 0.0)


@dataclass(frozen=True, eq=False)
class ConvolvedKernel:
    """Separable ``(K_h * K_eta)(y) = prod_j (K_{h_j} * K_{eta_j})(y_j)``."""

    base: Kernel
    h: np.ndarray
    eta: np.ndarray

    @property
    def dim(self):
        return len(self.h)

    @property
    def support(self):
        return self.h + self.eta

    def factor(self, j, t):
        return convolve_1d(self.base, self.h[j], self.eta[j], t)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.ones(y.shape[:-1])
        for j in range(self.dim):
            out = out * self.factor(j, y[..., j])
        return out


def convolve_kernels(base, h, eta):
    """Build the separable convolution of ``K_h`` and ``K_eta``."""
    h = check_bandwidth(h)
    eta = check_bandwidth(eta)
    if h.shape != eta.shape:
        raise ValueError("h and eta must have the same length")
    return ConvolvedKernel(base=base, h=h, eta=eta)


def kernel_moments(kernel, max_power, nodes=10_000):
    """Midpoint-rule moments ``int x^l K`` for ``l = 0..max_power``.

    Independent of the exact polynomial algebra used elsewhere; the test
    suite uses it as the quadrature oracle.
    """
    edges = np.linspace(-1.0, 1.0, nodes + 1)
    # Gauss on every cell: exact for the polynomial moments up to degree 2*5-1
    t, w = gauss_legendre(5)
    a, b = edges[:-1], edges[1:]
    x = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * t
    wx = 0.5 * (b - a)[:, None] * w
    kx = kernel(x)
    return np.array([float(np.sum(wx * kx * x**l)) for l in range(max_power + 1)])


__all__ = [
    "Kernel",
    "ProductKernel",
    "ConvolvedKernel",
    "build_kernel",
    "convolve_kernels",
    "convolve_1d",
    "kernel_moments",
    "gauss_legendre",
    "check_bandwidth",
]
