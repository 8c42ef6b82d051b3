"""
Hot inner loops of the fixed-point solvers.

Every kernel exists twice: a numba ``@njit`` version with explicit loops and a
pure-numpy version. The numba set is used when numba imports and the
environment variable ``STREAMDEQ_NO_NUMBA`` is unset (or "0"/"false").

Both sets compute the same mathematics but round differently (explicit loops
vs BLAS), so results agree to ~1e-13, not bitwise. Within one backend every
path shares the same cell-application routine, which is what the bitwise
guarantees (static-scene equivalence, first Broyden step == first Picard step)
depend on.

Status codes returned by the solver kernels:
    0  ok
    1  non-finite value encountered
    2  residual norm above the divergence threshold
"""

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return decorator


IDENTITY = 0
TANH = 1

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_DIVERGED = 2

# Broyden divergence guard and update-skip ratio.
DIVERGENCE_NORM = 1e8
SKIP_RATIO = 1e-12


def _numba_disabled():
    flag = os.environ.get("STREAMDEQ_NO_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def injection_np(U, x, b):
    return U @ x + b


def apply_np(A, c, act, z):
    y = A @ z + c
    if act == TANH:
        np.tanh(y, out=y)
    return y


def norm_np(v):
    return math.sqrt(float(v @ v))


# overflow and nan inside a solve are expected and reported through the status code
@np.errstate(over="ignore", invalid="ignore")
def picard_np(A, c, act, z0, max_iters, tol):
    trace = np.empty(max_iters)
    z = z0.copy()
    fz = apply_np(A, c, act, z)
    n = 0
    for i in range(max_iters):
        z = fz
        fz = apply_np(A, c, act, z)
        r = norm_np(fz - z)
        if not math.isfinite(r):
            return z, trace[:n], n, STATUS_NONFINITE, i + 1
        trace[i] = r
        n = i + 1
        if r <= tol:
            break
    return z, trace[:n], n, STATUS_OK, 0


@np.errstate(over="ignore", invalid="ignore")
def broyden_np(A, c, act, z0, max_iters, tol, memory):
    dim = z0.shape[0]
    us = np.zeros((memory, dim))
    vs = np.zeros((memory, dim))
    count = 0
    trace = np.empty(max_iters)
    z = z0.copy()
    fz = apply_np(A, c, act, z)
    g = fz - z
    n = 0
    for i in range(max_iters):
        # step = -H g with H = -I + sum_k u_k v_k^T, written as f(z) + correction
        if count > 0:
            z_new = fz - us[:count].T @ (vs[:count] @ g)
        else:
            z_new = fz.copy()
        fz_new = apply_np(A, c, act, z_new)
        g_new = fz_new - z_new
        r = norm_np(g_new)
        if not math.isfinite(r):
            return z_new, trace[:n], n, STATUS_NONFINITE, i + 1
        if r > DIVERGENCE_NORM:
            return z_new, trace[:n], n, STATUS_DIVERGED, i + 1
        trace[i] = r
        n = i + 1
        if r <= tol or n == max_iters:
            z = z_new
            break
        dz = z_new - z
        dg = g_new - g
        if count > 0:
            h_dg = -dg + us[:count].T @ (vs[:count] @ dg)
            ht_dz = -dz + vs[:count].T @ (us[:count] @ dz)
        else:
            h_dg = -dg
            ht_dz = -dz
        denom = float(dz @ h_dg)
        if denom != 0.0 and abs(denom) >= SKIP_RATIO * norm_np(z_new):
            if count == memory:
                us[:-1] = us[1:]
                vs[:-1] = vs[1:]
                count -= 1
            us[count] = (dz - h_dg) / denom
            vs[count] = ht_dz
            count += 1
        z, fz, g = z_new, fz_new, g_new
    return z, trace[:n], n, STATUS_OK, 0


def power_np(A, v0, iters):
    v = v0 / norm_np(v0)
    for _ in range(iters):
        w = A.T @ (A @ v)
        nw = norm_np(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return norm_np(A @ v)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


@njit(cache=True)
def _norm_nb(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return math.sqrt(s)


@njit(cache=True)
def _dot_nb(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@njit(cache=True)
def _apply_into_nb(A, c, act, z, out):
    rows, cols = A.shape
    for i in range(rows):
        s = 0.0
        for j in range(cols):
            s += A[i, j] * z[j]
        s += c[i]
        if act == 1:
            out[i] = math.tanh(s)
        else:
            out[i] = s


@njit(cache=True)
def injection_nb(U, x, b):
    rows, cols = U.shape
    out = np.empty(rows)
    for i in range(rows):
        s = 0.0
        for j in range(cols):
            s += U[i, j] * x[j]
        out[i] = s + b[i]
    return out


@njit(cache=True)
def apply_nb(A, c, act, z):
    out = np.empty(A.shape[0])
    _apply_into_nb(A, c, act, z, out)
    return out


@njit(cache=True)
def picard_nb(A, c, act, z0, max_iters, tol):
    dim = z0.shape[0]
    trace = np.empty(max_iters)
    z = z0.copy()
    fz = np.empty(dim)
    _apply_into_nb(A, c, act, z, fz)
    diff = np.empty(dim)
    n = 0
    for i in range(max_iters):
        z, fz = fz, z
        _apply_into_nb(A, c, act, z, fz)
        for k in range(dim):
            diff[k] = fz[k] - z[k]
        r = _norm_nb(diff)
        if not math.isfinite(r):
            return z, trace[:n], n, 1, i + 1
        trace[i] = r
        n = i + 1
        if r <= tol:
            break
    return z, trace[:n], n, 0, 0


@njit(cache=True)
def _lowrank_nb(left, right, count, vec, out):
    # out += sum_k left[k] * (right[k] . vec), oldest pair first
    dim = vec.shape[0]
    for k in range(count):
        coef = 0.0
        for j in range(dim):
            coef += right[k, j] * vec[j]
        for j in range(dim):
            out[j] += left[k, j] * coef


@njit(cache=True)
def broyden_nb(A, c, act, z0, max_iters, tol, memory):
    dim = z0.shape[0]
    us = np.zeros((memory, dim))
    vs = np.zeros((memory, dim))
    count = 0
    trace = np.empty(max_iters)
    z = z0.copy()
    fz = np.empty(dim)
    _apply_into_nb(A, c, act, z, fz)
    g = fz - z
    z_new = np.empty(dim)
    fz_new = np.empty(dim)
    g_new = np.empty(dim)
    corr = np.empty(dim)
    dz = np.empty(dim)
    dg = np.empty(dim)
    h_dg = np.empty(dim)
    ht_dz = np.empty(dim)
    n = 0
    for i in range(max_iters):
        if count > 0:
            corr[:] = 0.0
            _lowrank_nb(us, vs, count, g, corr)
            for k in range(dim):
                z_new[k] = fz[k] - corr[k]
        else:
            for k in range(dim):
                z_new[k] = fz[k]
        _apply_into_nb(A, c, act, z_new, fz_new)
        for k in range(dim):
            g_new[k] = fz_new[k] - z_new[k]
        r = _norm_nb(g_new)
        if not math.isfinite(r):
            return z_new.copy(), trace[:n], n, 1, i + 1
        if r > DIVERGENCE_NORM:
            return z_new.copy(), trace[:n], n, 2, i + 1
        trace[i] = r
        n = i + 1
        if r <= tol or n == max_iters:
            return z_new.copy(), trace[:n], n, 0, 0
        for k in range(dim):
            dz[k] = z_new[k] - z[k]
            dg[k] = g_new[k] - g[k]
            h_dg[k] = -dg[k]
            ht_dz[k] = -dz[k]
        _lowrank_nb(us, vs, count, dg, h_dg)
        _lowrank_nb(vs, us, count, dz, ht_dz)
        denom = _dot_nb(dz, h_dg)
        if denom != 0.0 and abs(denom) >= SKIP_RATIO * _norm_nb(z_new):
            if count == memory:
                for k in range(memory - 1):
                    us[k, :] = us[k + 1, :]
                    vs[k, :] = vs[k + 1, :]
                count -= 1
            for k in range(dim):
                us[count, k] = (dz[k] - h_dg[k]) / denom
                vs[count, k] = ht_dz[k]
            count += 1
        z, z_new = z_new, z
        fz, fz_new = fz_new, fz
        g, g_new = g_new, g
    return z.copy(), trace[:n], n, 0, 0


@njit(cache=True)
def power_nb(A, v0, iters):
    rows, cols = A.shape
    v = v0 / _norm_nb(v0)
    w = np.empty(rows)
    u = np.empty(cols)
    for _ in range(iters):
        for i in range(rows):
            s = 0.0
            for j in range(cols):
                s += A[i, j] * v[j]
            w[i] = s
        for j in range(cols):
            s = 0.0
            for i in range(rows):
                s += A[i, j] * w[i]
            u[j] = s
        nu = _norm_nb(u)
        if nu == 0.0:
            return 0.0
        for j in range(cols):
            v[j] = u[j] / nu
    for i in range(rows):
        s = 0.0
        for j in range(cols):
            s += A[i, j] * v[j]
        w[i] = s
    return _norm_nb(w)


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------


class Kernels:
    """One backend's kernel set."""

    def __init__(self, name, injection, apply, picard, broyden, power):
        self.name = name
        self.injection = injection
        self.apply = apply
        self.picard = picard
        self.broyden = broyden
        self.power = power

    def __repr__(self):
        return f"Kernels({self.name!r})"


NUMPY = Kernels("numpy", injection_np, apply_np, picard_np, broyden_np, power_np)
NUMBA = Kernels("numba", injection_nb, apply_nb, picard_nb, broyden_nb, power_nb)


def get_kernels(name=None):
    """Return the kernel set called ``name``, or the active one if ``None``."""
    if name is None:
        return ACTIVE
    if name == "numpy":
        return NUMPY
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba backend requested but numba is not installed")
        return NUMBA
    raise ValueError(f"unknown backend {name!r}; expected 'numpy' or 'numba'")


ACTIVE = NUMBA if NUMBA_AVAILABLE and not _numba_disabled() else NUMPY
BACKEND = ACTIVE.name
