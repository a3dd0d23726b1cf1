"""Brute-force quadrature of the multi-plane path integral and of momentum moments.

Independent of the closed forms: the source, slit windows and free kernels are
sampled on quadrature nodes and integrated plane by plane.  Accuracy is
reported as the change between a run and one with twice as many nodes.
Below 16 digits the work is done in complex128, otherwise in mpmath.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Sequence

import mpmath
import numpy as np

from .config import PhysicalConstants, SetupGeometry

PANEL_ORDER = 16
MAX_PLANES = 4


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    half_width: float = 8.0          # integration half-range in local Gaussian widths
    nodes: int = 128                 # starting node count per axis
    rule: str = "gauss-legendre"     # or "trapezoid"
    digits: int = 15
    rel_tol: float = 1e-9
    max_nodes: int = 16384
    window: str = "gaussian"         # or "rect" (hard-edged slits of width 2 beta)
    source_center: float = 0.0

    def __post_init__(self):
        if self.nodes < 64:
            raise ValueError("at least 64 nodes per axis")
        if self.half_width < 6:
            raise ValueError("half-width must be at least 6 local widths")
        if self.rule not in ("gauss-legendre", "trapezoid"):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.window not in ("gaussian", "rect"):
            raise ValueError(f"unknown window {self.window!r}")


@dataclass(frozen=True)
class QuadratureResult:
    value: complex
    error: float
    nodes: int
    converged: bool

    @property
    def relative_error(self) -> float:
        return self.error / abs(self.value) if self.value else math.inf


# ---------------------------------------------------------------- nodes

@lru_cache(maxsize=8)
def _gl_reference(order: int, digits: int):
    if digits <= 15:
        x, w = np.polynomial.legendre.leggauss(order)
        return x, w
    with mpmath.workdps(digits + 10):
        x0, _ = np.polynomial.legendre.leggauss(order)
        xs, ws = [], []
        for guess in x0:
            r = mpmath.findroot(lambda t: mpmath.legendre(order, t), mpmath.mpf(guess))
            dp = mpmath.diff(lambda t: mpmath.legendre(order, t), r)
            xs.append(r)
            ws.append(2 / ((1 - r * r) * dp * dp))
        return np.array(xs, dtype=object), np.array(ws, dtype=object)


def nodes_weights(a: float, b: float, count: int, rule: str, digits: int = 15):
    """Composite rule on [a, b] with ``count`` nodes."""
    if rule == "trapezoid":
        if digits <= 15:
            x = np.linspace(a, b, count)
            w = np.full(count, (b - a) / (count - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            return x, w
        with mpmath.workdps(digits):
            a, b = mpmath.mpf(a), mpmath.mpf(b)
            h = (b - a) / (count - 1)
            x = np.array([a + i * h for i in range(count)], dtype=object)
            w = np.array([h] * count, dtype=object)
            w[0] = h / 2
            w[-1] = h / 2
            return x, w
    panels = max(1, count // PANEL_ORDER)
    rx, rw = _gl_reference(PANEL_ORDER, digits)
    if digits <= 15:
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * rx[None, :]).ravel()
        w = (half[:, None] * rw[None, :]).ravel()
        return x, w
    with mpmath.workdps(digits):
        a, b = mpmath.mpf(a), mpmath.mpf(b)
        h = (b - a) / panels
        xs, ws = [], []
        for p in range(panels):
            mid = a + (p + mpmath.mpf(1) / 2) * h
            for t, wt in zip(rx, rw):
                xs.append(mid + h / 2 * t)
                ws.append(h / 2 * wt)
        return np.array(xs, dtype=object), np.array(ws, dtype=object)


def integrate_1d(f: Callable, a: float, b: float, spec: QuadratureSpec) -> QuadratureResult:
    """Integrate a vectorized f over [a, b], doubling nodes until the change is below rel_tol."""
    n = spec.nodes
    prev = None
    while True:
        x, w = nodes_weights(a, b, n, spec.rule, spec.digits)
        val = _dot(w, f(x), spec.digits)
        if prev is not None:
            err = abs(val - prev)
            if err <= spec.rel_tol * abs(val) or 2 * n > spec.max_nodes:
                return QuadratureResult(val, float(err), n, bool(err <= spec.rel_tol * abs(val)))
        prev = val
        n *= 2


def _dot(w, v, digits):
    if digits <= 15:
        return complex(np.dot(w, v))
    with mpmath.workdps(digits):
        return mpmath.fsum(wi * vi for wi, vi in zip(w, v))


# ---------------------------------------------------------------- path integral

class _Ops:
    """exp / sqrt / constants in the requested arithmetic."""

    def __init__(self, digits: int):
        self.digits = digits
        self.fast = digits <= 15

    def exp(self, z):
        if self.fast:
            return np.exp(z)
        return np.frompyfunc(mpmath.exp, 1, 1)(z)

    def num(self, v):
        if self.fast:
            return float(v)
        return mpmath.mpf(str(v))

    def cnum(self, v):
        if self.fast:
            return complex(v)
        return mpmath.mpc(v)

    @property
    def pi(self):
        return math.pi if self.fast else +mpmath.pi

    def sqrt(self, z):
        return np.sqrt(complex(z)) if self.fast else mpmath.sqrt(z)

    def j(self):
        return 1j if self.fast else mpmath.mpc(0, 1)


def _slit_data(geom: SetupGeometry, selection: Sequence[int]):
    xs = [geom.slit_centers[j][s] for j, s in enumerate(selection)]
    return xs, list(geom.slit_half_widths)


def _window(ops: _Ops, x, center, beta, kind):
    d = x - center
    if kind == "gaussian":
        return ops.exp(-(d * d) / (2 * beta * beta))
    return np.where(np.abs(np.array(d, dtype=float)) <= float(beta), 1.0, 0.0)


def _kernel_apply(ops: _Ops, consts, dt, targets, sources, values, chunk: int = 1024):
    """sum_i K(target, source_i; dt) * values_i, with values already weighted."""
    m, hbar = ops.num(consts.mass), ops.num(consts.hbar)
    coef = m / (2 * hbar * dt)
    pref = ops.sqrt(m / (2 * ops.pi * ops.j() * hbar * dt))
    out = []
    for s in range(0, len(targets), chunk):
        t = targets[s: s + chunk]
        d = t[:, None] - sources[None, :]
        K = ops.exp(ops.j() * coef * d * d)
        out.append(K.dot(values))
    res = np.concatenate(out)
    return pref * res


def _axis_range(center, width, spec: QuadratureSpec, kind: str):
    if kind == "rect":
        return center - width, center + width
    return center - spec.half_width * width, center + spec.half_width * width


def _amplitudes_at(geom, consts, selection, xs, spec: QuadratureSpec, n: int):
    ops = _Ops(spec.digits)
    centers, betas = _slit_data(geom, selection)
    v = ops.num(consts.v_z)
    times = [ops.num(L) / v for L in geom.plane_distances]
    s0 = ops.num(geom.source_width)
    x0c = ops.num(spec.source_center)
    a, b = _axis_range(x0c, s0, spec, "gaussian")
    nodes, w = nodes_weights(a, b, n, spec.rule, spec.digits)
    d = nodes - x0c
    psi = ops.exp(-(d * d) / (2 * s0 * s0)) / ops.sqrt(s0 * ops.sqrt(ops.pi))
    vals = w * psi
    for j, (X, beta) in enumerate(zip(centers, betas)):
        X, beta = ops.num(X), ops.num(beta)
        a, b = _axis_range(X, beta, spec, spec.window)
        nxt, wn = nodes_weights(a, b, n, spec.rule, spec.digits)
        psi = _kernel_apply(ops, consts, times[j], nxt, nodes, vals)
        vals = wn * _window(ops, nxt, X, beta, spec.window) * psi
        nodes = nxt
    targets = np.array([ops.num(x) for x in xs], dtype=float if ops.fast else object)
    return _kernel_apply(ops, consts, times[-1], targets, nodes, vals)


def quadrature_amplitudes(geom: SetupGeometry, consts: PhysicalConstants, selection: Sequence[int],
                          xs: Sequence[float], spec: QuadratureSpec = QuadratureSpec()) -> list:
    """Path-integral amplitude through one slit per plane at each screen point."""
    if geom.n_planes > MAX_PLANES:
        raise OracleError(f"quadrature limited to N <= {MAX_PLANES} planes")
    if len(selection) != geom.slit_plane_count:
        raise ValueError("one slit index per plane required")
    n = spec.nodes
    prev = None
    while True:
        cur = _amplitudes_at(geom, consts, selection, xs, spec, n)
        if prev is not None:
            errs = [abs(c - p) for c, p in zip(cur, prev)]
            done = all(e <= spec.rel_tol * abs(c) for e, c in zip(errs, cur))
            if done or 2 * n > spec.max_nodes:
                return [QuadratureResult(complex(c), float(e), n, bool(e <= spec.rel_tol * abs(c)))
                        for c, e in zip(cur, errs)]
        prev = cur
        n *= 2


def quadrature_amplitude(geom: SetupGeometry, consts: PhysicalConstants, selection: Sequence[int], x: float,
                         spec: QuadratureSpec = QuadratureSpec()) -> QuadratureResult:
    return quadrature_amplitudes(geom, consts, selection, [x], spec)[0]


def propagated_source(consts: PhysicalConstants, sigma0, t, xs, spec: QuadratureSpec = QuadratureSpec()) -> list:
    """Free evolution of the Gaussian source for time t, sampled at xs."""
    ops = _Ops(spec.digits)
    s0 = ops.num(sigma0)
    t = ops.num(t)
    norm = ops.sqrt(s0 * ops.sqrt(ops.pi))

    def integrand(u, x):
        return _point_kernel(ops, consts, t, x, u) * ops.exp(-(u * u) / (2 * s0 * s0)) / norm

    half = spec.half_width * float(s0)
    return [integrate_1d(lambda u, x=x: integrand(u, x), -half, half, spec) for x in xs]


def _point_kernel(ops, consts, dt, x, u):
    m, hbar = ops.num(consts.mass), ops.num(consts.hbar)
    pref = ops.sqrt(m / (2 * ops.pi * ops.j() * hbar * dt))
    d = ops.num(x) - u
    return pref * ops.exp(ops.j() * (m / (2 * hbar * dt)) * d * d)


def fit_gaussian(values: Sequence[complex], h: float):
    """(g, a, b) of exp(g + a x^2 + b x) through samples at x = -h, 0, h.

    The complex logarithms are taken on the principal branch, so h must keep
    |Im a| h^2 and |Im b| h below pi / 2.
    """
    vm, v0, vp = (complex(v) for v in values)
    a = np.log(vp * vm / (v0 * v0)) / (2 * h * h)
    b = np.log(vp / vm) / (2 * h)
    return complex(np.log(v0)), complex(a), complex(b)


# ---------------------------------------------------------------- moments

def quadrature_moments(terms, hbar, spec: QuadratureSpec = QuadratureSpec()):
    """(<p>, <p^2>, error estimate) of a Gaussian sum by direct integration.

    ``terms`` is a sequence of (g, a, b) complex triples.  The derivative of
    each term is taken analytically; <p^2> uses |psi'|^2.
    """
    tr = [(complex(g), complex(a), complex(b)) for g, a, b in terms]
    for _, a, _ in tr:
        if a.real >= 0:
            raise OracleError("state is not normalizable")
    hbar = float(hbar)
    lo, hi = math.inf, -math.inf
    for _, a, b in tr:
        c = -b.real / (2 * a.real)
        w = 1 / math.sqrt(-2 * a.real)
        lo, hi = min(lo, c - spec.half_width * w), max(hi, c + spec.half_width * w)
    # scale out the largest envelope so the integrands stay in range
    peak = max(g.real + (b.real ** 2) / (-4 * a.real) for g, a, b in tr)

    def psi(x):
        return sum(np.exp(g - peak + a * x * x + b * x) for g, a, b in tr)

    def dpsi(x):
        return sum((2 * a * x + b) * np.exp(g - peak + a * x * x + b * x) for g, a, b in tr)

    fast = replace(spec, digits=15)
    norm = integrate_1d(lambda x: np.abs(psi(x)) ** 2 + 0j, lo, hi, fast)
    p1 = integrate_1d(lambda x: np.conj(psi(x)) * (-1j * hbar) * dpsi(x), lo, hi, fast)
    p2 = integrate_1d(lambda x: (hbar ** 2) * np.abs(dpsi(x)) ** 2 + 0j, lo, hi, fast)
    mean = (p1.value / norm.value).real
    sq = (p2.value / norm.value).real
    err = max(norm.relative_error, p1.error / max(abs(p1.value), 1e-300) if p1.value else 0.0, p2.relative_error)
    return mean, sq, err
