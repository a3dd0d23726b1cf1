"""Closed-form Gaussian-slit propagation.

A wave packet between planes is a sum of terms exp(g + a x^2 + b x).  Passing
one Gaussian slit of half-width beta centred at X and then propagating freely
for dt maps (a, b, g) to new values through the per-plane coefficients below;
``a = A + iB`` does not depend on which slit was taken, so the coefficients
are shared by every trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .config import PhysicalConstants, SetupGeometry, derive_schedule, geometry_reals
from .numerics import cabs2, compensated_complex_sum, to_real


def _i():
    return mpc(0, 1)


class DegenerateGeometryError(ArithmeticError):
    pass


class NonNormalizableError(ArithmeticError):
    pass


# ---------------------------------------------------------------- kernel / LCT

@dataclass(frozen=True)
class KernelParams:
    delta_t: mpfr
    prefactor: mpc      # sqrt(m / (2 pi i hbar dt))
    phase_scale: mpfr   # m / (2 hbar dt)

    def __call__(self, x, u):
        d = x - u
        return self.prefactor * gmpy2.exp(mpc(0, self.phase_scale * d * d))


def kernel_params(consts: PhysicalConstants, delta_t) -> KernelParams:
    dt = to_real(delta_t)
    if dt <= 0:
        raise ValueError("kernel time step must be positive")
    m, hbar = to_real(consts.mass), to_real(consts.hbar)
    pref = gmpy2.sqrt(m / (2 * gmpy2.const_pi() * _i() * hbar * dt))
    return KernelParams(dt, pref, m / (2 * hbar * dt))


@dataclass(frozen=True)
class LctParams:
    a: mpfr
    b: mpfr
    c: mpfr
    d: mpfr
    alpha: mpfr
    gamma: mpfr
    eta: mpfr

    @property
    def determinant(self) -> mpfr:
        return self.a * self.d - self.b * self.c

    def is_unimodular(self, tol) -> bool:
        return abs(self.determinant - 1) <= tol


def lct_from_parameters(alpha, gamma, eta) -> LctParams:
    alpha, gamma, eta = to_real(alpha), to_real(gamma), to_real(eta)
    if eta == 0:
        raise ValueError("eta must be non-zero")
    return LctParams(gamma / eta, 1 / eta, (alpha * gamma - eta * eta) / eta, alpha / eta, alpha, gamma, eta)


def free_propagation_lct(consts: PhysicalConstants, delta_t) -> LctParams:
    """Free flight for delta_t is the chirp transform with alpha = gamma = eta = m/(2 pi hbar dt)."""
    s = to_real(consts.mass) / (2 * gmpy2.const_pi() * to_real(consts.hbar) * to_real(delta_t))
    return lct_from_parameters(s, s, s)


# ---------------------------------------------------------------- Gaussian terms

@dataclass(frozen=True)
class GaussianTerm:
    """exp(g + a x^2 + b x) with complex g, a, b."""
    g: mpc
    a: mpc
    b: mpc

    def value(self, x) -> mpc:
        return gmpy2.exp(self.g + self.a * x * x + self.b * x)

    def window(self, center, beta) -> "GaussianTerm":
        """Multiply by the slit transmission exp(-(x - X)^2 / (2 beta^2))."""
        inv = 1 / (2 * beta * beta)
        return GaussianTerm(self.g - center * center * inv, self.a - inv, self.b + 2 * center * inv)

    def propagate(self, delta_t, consts: PhysicalConstants) -> "GaussianTerm":
        """Free-kernel convolution evaluated by completing the square."""
        m, hbar = to_real(consts.mass), to_real(consts.hbar)
        dt = to_real(delta_t)
        kappa = mpc(0, m / (2 * hbar * dt))
        s = kappa + self.a
        pi = gmpy2.const_pi()
        g = (self.g + gmpy2.log(m / (2 * pi * _i() * hbar * dt)) / 2
             + gmpy2.log(pi / (-s)) / 2 - self.b * self.b / (4 * s))
        return GaussianTerm(g, kappa * self.a / s, kappa * self.b / s)

    def shifted(self, offset) -> "GaussianTerm":
        """The same function translated by ``offset`` along x."""
        a, b, g = self.a, self.b, self.g
        return GaussianTerm(g + a * offset * offset - b * offset, a, b - 2 * a * offset)


def source_term(sigma0, center=0) -> GaussianTerm:
    """Normalized Gaussian source of width sigma0."""
    sigma0 = to_real(sigma0)
    g = -gmpy2.log(sigma0 * gmpy2.sqrt(gmpy2.const_pi())) / 2
    term = GaussianTerm(mpc(g), mpc(-1 / (2 * sigma0 * sigma0)), mpc(0))
    return term.shifted(to_real(center)) if center else term


# ---------------------------------------------------------------- per-plane recursion

@dataclass(frozen=True)
class InitialIterates:
    A: mpfr
    B: mpfr
    chi0: mpc

    @property
    def C(self):
        return mpfr(0)

    @property
    def D(self):
        return mpfr(0)


@dataclass(frozen=True)
class PlaneIterates:
    plane: int
    beta: mpfr
    delta_t: mpfr
    A_prev: mpfr
    B_prev: mpfr
    varsigma: mpc
    xi: mpc
    varrho: mpfr
    zeta: mpfr
    zeta_c: mpfr
    zeta_d: mpfr
    p1: mpc
    p2: mpc
    p3: mpc
    p4: mpfr
    p5: mpfr
    A: mpfr
    B: mpfr

    @property
    def sqrt_xi(self) -> mpc:
        return gmpy2.sqrt(self.xi)


def initial_iterates(consts: PhysicalConstants, sigma0, t01) -> InitialIterates:
    m, hbar = to_real(consts.mass), to_real(consts.hbar)
    s0, t = to_real(sigma0), to_real(t01)
    den = 2 * hbar * hbar * t * t + 2 * m * m * s0 ** 4
    A0 = -m * m * s0 * s0 / den
    B0 = hbar * m * t / den
    chi0 = gmpy2.sqrt(mpc(m * s0) / mpc(m * s0 * s0, hbar * t)) / gmpy2.root(gmpy2.const_pi(), 4)
    return InitialIterates(A0, B0, chi0)


def step_coefficients(A, B, beta, delta_t, mass, hbar, plane: int = 0) -> PlaneIterates:
    """Window of half-width beta followed by free flight delta_t, for an incoming a = A + iB."""
    if A >= 0:
        raise NonNormalizableError(f"incoming envelope coefficient A = {A} is not negative (plane {plane})")
    if beta <= 0 or delta_t < 0:
        raise DegenerateGeometryError(f"plane {plane}: need beta > 0 and a non-negative flight time")
    m, h, t, b2 = mass, hbar, delta_t, beta * beta
    b4 = b2 * b2
    i = _i()
    varsigma = b2 * m + h * t * (2 * b2 * mpc(B, -A) + i)
    if abs(varsigma) < mpfr(10) ** (-_half_digits()) * abs(b2 * m):
        raise DegenerateGeometryError(f"varsigma vanishes at plane {plane}")
    xi = b2 * m / varsigma
    varrho = 4 * b4 * (A * A + B * B) - 4 * A * b2 + 1
    zeta = 4 * B * b4 * h * m * t + b4 * m * m + h * h * t * t * varrho
    if abs(zeta) < mpfr(10) ** (-_half_digits()) * abs(b4 * m * m):
        raise DegenerateGeometryError(f"zeta vanishes at plane {plane}")
    zeta_c = (2 * B * h * m * t * b2 + b2 * m * m) / zeta
    zeta_d = h * m * t * (2 * A * b2 - 1) / zeta
    p1 = -(2 * h * t * mpc(A, B) + i * m) / (2 * i * varsigma)
    p2 = -b2 * h * t / (2 * i * varsigma)
    p3 = -h * t / (i * varsigma)
    A_new = b2 * m * m * (2 * A * b2 - 1) / (2 * zeta)
    B_new = (2 * B * b4 * m * m + h * m * t * varrho) / (2 * zeta)
    p4 = b2 * zeta_c
    p5 = -2 * h * t * A_new / m
    if A_new >= 0:
        raise NonNormalizableError(f"A_{plane} = {A_new} is not negative")
    return PlaneIterates(plane, beta, t, A, B, varsigma, xi, varrho, zeta, zeta_c, zeta_d,
                         p1, p2, p3, p4, p5, A_new, B_new)


def _half_digits() -> int:
    return int(gmpy2.get_context().precision * 0.30103 / 2)


def propagate_plane(prev, beta, t_next, consts: PhysicalConstants, plane: int = 0) -> PlaneIterates:
    """Iterates at plane j from those at plane j-1 (``prev`` exposes A and B)."""
    return step_coefficients(prev.A, prev.B, to_real(beta), to_real(t_next),
                             to_real(consts.mass), to_real(consts.hbar), plane)


def apply_plane(term: GaussianTerm, center, it: PlaneIterates) -> GaussianTerm:
    """Push a term through slit ``center`` using precomputed coefficients for its incoming a.

    The linear coefficient b = C + iD is carried with real C, D:
    C' = zc X + p4 C + p5 D,  D' = zd X - p5 C + p4 D.
    """
    C, D = term.b.real, term.b.imag
    u = term.b
    g = term.g + gmpy2.log(it.xi) / 2 + it.p1 * center * center + it.p2 * u * u + it.p3 * u * center
    C_new = it.zeta_c * center + it.p4 * C + it.p5 * D
    D_new = it.zeta_d * center - it.p5 * C + it.p4 * D
    return GaussianTerm(g, mpc(it.A, it.B), mpc(C_new, D_new))


def plane_iterates(geom: SetupGeometry, consts: PhysicalConstants):
    """Initial iterates and the per-plane list for planes 1..N-1."""
    sched = derive_schedule(geom, consts)
    _, betas = geometry_reals(geom)
    init = initial_iterates(consts, geom.source_width, sched.durations[0])
    its = []
    prev = init
    for j, beta in enumerate(betas, start=1):
        prev = propagate_plane(prev, beta, sched.durations[j], consts, plane=j)
        its.append(prev)
    return init, its


def initial_term(init: InitialIterates) -> GaussianTerm:
    return GaussianTerm(gmpy2.log(init.chi0), mpc(init.A, init.B), mpc(0))


# ---------------------------------------------------------------- coupling model

def _obj(rows, cols):
    return np.full((rows, cols), mpc(0), dtype=object)


@dataclass(frozen=True)
class CouplingModel:
    c_vec: tuple
    d_vec: tuple
    H: np.ndarray           # complex (N-1)x(N-1), object dtype
    A_last: mpfr
    B_last: mpfr
    chi0: mpc
    prefactor: mpc          # chi0 * prod sqrt(xi_j)
    p1: tuple
    p2: tuple
    p3: tuple
    G: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    V_L: np.ndarray
    v_blocks: dict          # (k, j) -> (c, d) contribution of plane k+1 to plane j
    iterates: tuple = field(repr=False)
    initial: InitialIterates = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.c_vec)

    @property
    def H_R(self) -> np.ndarray:
        return np.vectorize(lambda z: z.real, otypes=[object])(self.H)

    @property
    def H_I(self) -> np.ndarray:
        return np.vectorize(lambda z: z.imag, otypes=[object])(self.H)

    @property
    def lambda_prefactor(self) -> mpfr:
        return cabs2(self.prefactor)

    def structure(self):
        """(p_k, M_1k, M_2k) for k = 1..3."""
        eye = np.eye(self.size, dtype=object)
        eye = np.vectorize(lambda v: mpc(v), otypes=[object])(eye)
        return [(self.p1, eye, eye), (self.p2, self.G, self.G), (self.p3, self.G, self.E1)]


def _p_matrix(it: PlaneIterates):
    return [[it.p4, it.p5], [-it.p5, it.p4]]


def _matmul2(x, y):
    return [[x[0][0] * y[0][0] + x[0][1] * y[1][0], x[0][0] * y[0][1] + x[0][1] * y[1][1]],
            [x[1][0] * y[0][0] + x[1][1] * y[1][0], x[1][0] * y[0][1] + x[1][1] * y[1][1]]]


def v_block(its: Sequence[PlaneIterates], k: int, j: int):
    """v_{k,j} = P_j P_{j-1} ... P_{k+2} [zc_{k+1}, zd_{k+1}], products taken left to right."""
    src = its[k]                    # plane k+1
    M = None
    for plane in range(j, k + 1, -1):
        P = _p_matrix(its[plane - 1])
        M = P if M is None else _matmul2(M, P)
    if M is None:
        return (src.zeta_c, src.zeta_d)
    return (M[0][0] * src.zeta_c + M[0][1] * src.zeta_d, M[1][0] * src.zeta_c + M[1][1] * src.zeta_d)


def build_coupling(init: InitialIterates, its: Sequence[PlaneIterates]) -> CouplingModel:
    n = len(its)
    if n < 1:
        raise ValueError("need at least one slit plane")
    if any(it.plane and it.plane != j for j, it in enumerate(its, start=1)):
        raise ValueError("iterates are not in plane order")
    blocks = {(k, j): v_block(its, k, j) for j in range(1, n + 1) for k in range(j)}
    c_vec = tuple(blocks[(k, n)][0] for k in range(n))
    d_vec = tuple(blocks[(k, n)][1] for k in range(n))

    m = n - 1   # N - 2
    V_L = _obj(2 * m, m)
    for r in range(1, m + 1):
        for k in range(r):
            V_L[2 * (r - 1), k] = mpc(blocks[(k, r)][0])
            V_L[2 * (r - 1) + 1, k] = mpc(blocks[(k, r)][1])
    E2 = _obj(m, 2 * m)
    for r in range(m):
        E2[r, 2 * r] = mpc(1)
        E2[r, 2 * r + 1] = _i()
    G = _obj(n, n)
    if m:
        G[:m, :m] = E2.dot(V_L)
    E1 = _obj(n, n)
    for r in range(m):
        E1[r, r + 1] = mpc(1)

    p1 = tuple(it.p1 for it in its)
    p2 = tuple([it.p2 for it in its[1:]] + [mpc(0)])
    p3 = tuple([it.p3 for it in its[1:]] + [mpc(0)])
    H = _obj(n, n)
    eye = _obj(n, n)
    for r in range(n):
        eye[r, r] = mpc(1)
    for p, M1, M2 in ((p1, eye, eye), (p2, G, G), (p3, G, E1)):
        D = _obj(n, n)
        for r in range(n):
            D[r, r] = p[r]
        H = H + M2.T.dot(D).dot(M1)

    pref = init.chi0
    for it in its:
        pref = pref * it.sqrt_xi
    return CouplingModel(c_vec, d_vec, H, its[-1].A, its[-1].B, init.chi0, pref,
                         p1, p2, p3, G, E1, E2, V_L, blocks, tuple(its), init)


def coupling_for(geom: SetupGeometry, consts: PhysicalConstants) -> CouplingModel:
    init, its = plane_iterates(geom, consts)
    return build_coupling(init, its)


def quadratic_form(H: np.ndarray, x: Sequence) -> mpc:
    n = len(x)
    if H.shape != (n, n):
        raise ValueError(f"H is {H.shape}, x has length {n}")
    acc = []
    for r in range(n):
        for c in range(n):
            acc.append(H[r, c] * x[r] * x[c])
    return compensated_complex_sum(acc)


def trace_form(structure, x: Sequence) -> mpc:
    """sum_k p_k^T ((M_1k x) * (M_2k x)), the elementwise form of the same quadratic."""
    xv = np.array([mpc(v) for v in x], dtype=object)
    acc = []
    for p, M1, M2 in structure:
        u, w = M1.dot(xv), M2.dot(xv)
        acc.extend(pk * uk * wk for pk, uk, wk in zip(p, u, w))
    return compensated_complex_sum(acc)


# ---------------------------------------------------------------- scalar reference route

@dataclass(frozen=True)
class ScalarPath:
    C: tuple        # C_{n,j}, j = 1..N-1
    D: tuple
    chi: mpc        # chi_0 * prod_j chi_{n,j}


def scalar_recursion(init: InitialIterates, its: Sequence[PlaneIterates], x: Sequence) -> ScalarPath:
    """Plane-by-plane C/D recursion and the per-plane factor product, without any matrices."""
    C, D = mpfr(0), mpfr(0)
    chi = init.chi0
    Cs, Ds = [], []
    for it, X in zip(its, x):
        u = mpc(C, D)
        chi = chi * it.sqrt_xi * gmpy2.exp(it.p1 * X * X + it.p2 * u * u + it.p3 * u * X)
        C, D = it.zeta_c * X + it.p4 * C + it.p5 * D, it.zeta_d * X - it.p5 * C + it.p4 * D
        Cs.append(C)
        Ds.append(D)
    return ScalarPath(tuple(Cs), tuple(Ds), chi)
