"""Hot loops: Euler recursion, kernel scatter sums, occupation counts.

Each ``*_nb`` function is compiled with numba; the ``*_py`` twin computes the
same thing with numpy and plain loops. Callers pick one through
:func:`ejdke._accel.resolve`.
"""
import math

import numpy as np

from ._accel import njit

DRIFT_CODES = {"radial-pushback": 0, "tanh": 1, "linear": 2, "zero": 3}


# --------------------------------------------------------------------------
# Euler scheme with constant a, gamma and a structured drift
# --------------------------------------------------------------------------


def _euler_py(x0, dt, kind, c, B, A, G, normals, jumps, comp, out, n_skip):
    """Pure-python Euler loop. Returns the failing step index or -1."""
    d = x0.shape[0]
    x = x0.copy()
    sq = math.sqrt(dt)
    n = normals.shape[0]
    b = np.empty(d)
    for k in range(n):
        if k >= n_skip:
            out[k - n_skip] = x
        if kind == 0:
            r = math.sqrt(float(x @ x))
            s = -c / max(r, 1.0)
            b = s * x
        elif kind == 1:
            b = -c * np.tanh(x)
        elif kind == 2:
            b = B @ x
        else:
            b = np.zeros(d)
        x = x + b * dt + A @ normals[k] * sq + G @ (jumps[k] - comp)
        if not np.all(np.isfinite(x)):
            return k
    x0[:] = x
    return -1


@njit
def _euler_nb(x0, dt, kind, c, B, A, G, normals, jumps, comp, out, n_skip):
    d = x0.shape[0]
    x = x0.copy()
    xn = np.empty(d)
    b = np.empty(d)
    sq = math.sqrt(dt)
    n = normals.shape[0]
    for k in range(n):
        if k >= n_skip:
            for i in range(d):
                out[k - n_skip, i] = x[i]
        if kind == 0:
            r2 = 0.0
            for i in range(d):
                r2 += x[i] * x[i]
            s = -c / max(math.sqrt(r2), 1.0)
            for i in range(d):
                b[i] = s * x[i]
        elif kind == 1:
            for i in range(d):
                b[i] = -c * math.tanh(x[i])
        elif kind == 2:
            for i in range(d):
                acc = 0.0
                for j in range(d):
                    acc += B[i, j] * x[j]
                b[i] = acc
        else:
            for i in range(d):
                b[i] = 0.0
        ok = True
        for i in range(d):
            noise = 0.0
            jmp = 0.0
            for j in range(d):
                noise += A[i, j] * normals[k, j]
                jmp += G[i, j] * (jumps[k, j] - comp[j])
            xn[i] = x[i] + b[i] * dt + noise * sq + jmp
            if not math.isfinite(xn[i]):
                ok = False
        if not ok:
            return k
        for i in range(d):
            x[i] = xn[i]
    for i in range(d):
        x0[i] = x[i]
    return -1


def euler_structured(backend, *args):
    if backend == "numba":
        return _euler_nb(*args)
    return _euler_py(*args)


# --------------------------------------------------------------------------
# Kernel evaluation helpers (scalar, numba-friendly)
# --------------------------------------------------------------------------


@njit
def _poly_kernel(coeffs, u):
    if u < -1.0 or u > 1.0:
        return 0.0
    acc = 0.0
    for i in range(coeffs.shape[0] - 1, -1, -1):
        acc = acc * u + coeffs[i]
    return acc


@njit
def _conv_value(coeffs, gl_t, gl_w, h, eta, x):
    """(K_h * K_eta)(x) by Gauss-Legendre on the support overlap."""
    lo = max(-eta, x - h)
    hi = min(eta, x + h)
    if hi <= lo:
        return 0.0
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    acc = 0.0
    for q in range(gl_t.shape[0]):
        u = mid + half * gl_t[q]
        acc += gl_w[q] * _poly_kernel(coeffs, (u - x) / h) * _poly_kernel(coeffs, u / eta)
    return half * acc / (h * eta)


# --------------------------------------------------------------------------
# Scatter: values[node] += w * prod_j g_j(X_u^j - x_j)
# --------------------------------------------------------------------------


@njit
def _axis_values(coeffs, gl_t, gl_w, h, eta, lo, delta, count, xj, row):
    """Fill ``row`` with factor values at the nodes near ``xj``; return (first, width)."""
    reach = h + eta
    # node i sits at lo + (i + 0.5) delta; one extra node each side
    i0 = int(math.floor((xj - reach - lo) / delta - 0.5)) - 1
    i1 = int(math.ceil((xj + reach - lo) / delta - 0.5)) + 1
    if i0 < 0:
        i0 = 0
    if i1 > count - 1:
        i1 = count - 1
    if i1 < i0:
        return i0, 0
    nc = coeffs.shape[0]
    for m in range(i1 - i0 + 1):
        t = lo + (i0 + m + 0.5) * delta - xj
        if eta > 0.0:
            row[m] = _conv_value(coeffs, gl_t, gl_w, h, eta, t)
        else:
            u = t / h
            if u < -1.0 or u > 1.0:
                row[m] = 0.0
            else:
                acc = 0.0
                for k in range(nc - 1, -1, -1):
                    acc = acc * u + coeffs[k]
                row[m] = acc / h
    return i0, i1 - i0 + 1


@njit
def _scatter_nb(states, weight, lo, delta, counts, coeffs, gl_t, gl_w, h, eta):
    n, d = states.shape
    total = 1
    for j in range(d):
        total *= counts[j]
    values = np.zeros(total)
    strides = np.empty(d, dtype=np.int64)
    s = 1
    for j in range(d - 1, -1, -1):
        strides[j] = s
        s *= counts[j]
    maxw = 0
    for j in range(d):
        # floor/ceil plus one guard node per side: at most 2 reach / delta + 5
        w = int(2.0 * (h[j] + eta[j]) / delta[j]) + 6
        if w > maxw:
            maxw = w
    fvals = np.zeros((d, maxw))
    first = np.zeros(d, dtype=np.int64)
    width = np.zeros(d, dtype=np.int64)
    idx = np.zeros(d, dtype=np.int64)
    for u in range(n):
        empty = False
        for j in range(d):
            i0, w = _axis_values(coeffs, gl_t, gl_w, h[j], eta[j], lo[j], delta[j], counts[j], states[u, j], fvals[j])
            if w == 0:
                empty = True
                break
            first[j] = i0
            width[j] = w
        if empty:
            continue
        if d == 1:
            for a in range(width[0]):
                values[first[0] + a] += weight * fvals[0, a]
        elif d == 2:
            for a in range(width[0]):
                pa = weight * fvals[0, a]
                base = (first[0] + a) * strides[0] + first[1]
                for b in range(width[1]):
                    values[base + b] += pa * fvals[1, b]
        elif d == 3:
            for a in range(width[0]):
                pa = weight * fvals[0, a]
                ba = (first[0] + a) * strides[0]
                for b in range(width[1]):
                    pb = pa * fvals[1, b]
                    base = ba + (first[1] + b) * strides[1] + first[2]
                    for c in range(width[2]):
                        values[base + c] += pb * fvals[2, c]
        else:
            # odometer over the product of per-axis ranges
            for j in range(d):
                idx[j] = 0
            while True:
                prod = weight
                flat = 0
                for j in range(d):
                    prod *= fvals[j, idx[j]]
                    flat += (first[j] + idx[j]) * strides[j]
                values[flat] += prod
                j = d - 1
                while j >= 0:
                    idx[j] += 1
                    if idx[j] < width[j]:
                        break
                    idx[j] = 0
                    j -= 1
                if j < 0:
                    break
    return values


def axis_factor_matrix(x_axis, samples, kernel, h, eta):
    """Dense ``(n_samples, n_nodes)`` matrix of ``g(node - X_u)`` for one axis."""
    from .kernel import convolve_1d

    diff = x_axis[None, :] - samples[:, None]
    if eta > 0.0:
        return convolve_1d(kernel, h, eta, diff)
    return kernel.scaled(diff, h)


def _scatter_py(states, weight, axes, kernel, h, eta, chunk=4096):
    """Separable chunked contraction; same sum as the scatter loop."""
    n, d = states.shape
    shape = tuple(len(a) for a in axes)
    values = np.zeros(shape)
    for s in range(0, n, chunk):
        block = states[s : s + chunk]
        mats = [axis_factor_matrix(axes[j], block[:, j], kernel, h[j], eta[j]) for j in range(d)]
        acc = mats[0]
        for j in range(1, d):
            acc = (acc[:, :, None] * mats[j][:, None, :]).reshape(len(block), -1)
        values += weight * acc.sum(axis=0).reshape(shape)
    return values.ravel()


# --------------------------------------------------------------------------
# Cube occupation and nearest-node histogram
# --------------------------------------------------------------------------


@njit
def _cube_occupation_nb(states, center, halves):
    n, d = states.shape
    m = halves.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    for u in range(n):
        dist = 0.0
        for j in range(d):
            a = abs(states[u, j] - center[j])
            if a > dist:
                dist = a
        for k in range(m):
            if dist < halves[k]:
                counts[k] += 1
    return counts


def _cube_occupation_py(states, center, halves):
    dist = np.max(np.abs(states - center[None, :]), axis=1)
    return np.array([int(np.count_nonzero(dist < hk)) for hk in halves], dtype=np.int64)


@njit
def _node_histogram_nb(states, lo, delta, counts, half_width, hist):
    n, d = states.shape
    for u in range(n):
        flat = 0
        inside = True
        for j in range(d):
            t = (states[u, j] - lo[j]) / delta[j] - 0.5
            i = int(math.floor(t + 0.5))
            if i < 0 or i >= counts[j]:
                inside = False
                break
            node = lo[j] + (i + 0.5) * delta[j]
            if abs(states[u, j] - node) >= half_width[j]:
                inside = False
                break
            flat = flat * counts[j] + i
        if inside:
            hist[flat] += 1


def _node_histogram_py(states, lo, delta, counts, half_width, hist):
    t = (states - lo[None, :]) / delta[None, :] - 0.5
    i = np.floor(t + 0.5).astype(np.int64)
    node = lo[None, :] + (i + 0.5) * delta[None, :]
    ok = np.all((i >= 0) & (i < counts[None, :]) & (np.abs(states - node) < half_width[None, :]), axis=1)
    flat = np.ravel_multi_index(tuple(i[ok].T), tuple(counts))
    hist += np.bincount(flat, minlength=hist.shape[0]).astype(hist.dtype)
