"""Trajectory enumeration, per-path detector amplitudes and sampled screen intensity."""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .config import SetupGeometry
from .numerics import cabs2, compensated_complex_sum, format_real, to_real
from .propagator import CouplingModel, GaussianTerm, quadratic_form

# samples between direct re-evaluations of the per-term exponentials
ANCHOR_STRIDE = 64


class IntensityRangeError(OverflowError):
    pass


@dataclass(frozen=True)
class TrajectorySelector:
    n: int
    s: tuple            # slit index per plane, 0-based
    x: tuple            # selected slit centers in meters

    def x_scaled(self, sampling_interval) -> tuple:
        """Lattice point x * T_s / (2 pi)."""
        f = to_real(sampling_interval) / (2 * gmpy2.const_pi())
        return tuple(v * f for v in self.x)

    def signed_labels(self, radices: Sequence[int]) -> tuple:
        """Slit labels centred on zero (i in [-S_j, S_j] for odd slit counts)."""
        return tuple(s - (r - 1) // 2 for s, r in zip(self.s, radices))


def decode_path(n: int, radices: Sequence[int]) -> tuple:
    """Mixed-radix digits of n, first plane most significant."""
    digits = []
    for r in reversed(radices):
        n, d = divmod(n, r)
        digits.append(d)
    if n:
        raise ValueError("path index out of range")
    return tuple(reversed(digits))


def encode_path(s: Sequence[int], radices: Sequence[int]) -> int:
    n = 0
    for d, r in zip(s, radices):
        n = n * r + d
    return n


def enumerate_paths(geom: SetupGeometry) -> Iterator[TrajectorySelector]:
    centers = [[to_real(x) for x in plane] for plane in geom.slit_centers]
    for n, s in enumerate(itertools.product(*(range(len(p)) for p in centers))):
        yield TrajectorySelector(n, s, tuple(centers[j][i] for j, i in enumerate(s)))


def _dot(u, v):
    return compensated_complex_sum(a * b for a, b in zip(u, v)).real


def path_amplitude(coupling: CouplingModel, traj: TrajectorySelector, x) -> mpc:
    """Detector amplitude of one classical trajectory at screen position x."""
    x = to_real(x)
    xn = traj.x
    C = _dot(coupling.c_vec, xn)
    D = _dot(coupling.d_vec, xn)
    quad = quadratic_form(coupling.H, xn)
    return (coupling.prefactor * gmpy2.exp(quad)
            * gmpy2.exp(mpc(coupling.A_last, coupling.B_last) * x * x + mpc(C, D) * x))


def path_term(coupling: CouplingModel, traj: TrajectorySelector) -> GaussianTerm:
    """The same amplitude as an exponential term in x, used by the fast sample sweep."""
    xn = traj.x
    C = _dot(coupling.c_vec, xn)
    D = _dot(coupling.d_vec, xn)
    g = gmpy2.log(coupling.prefactor) + quadratic_form(coupling.H, xn)
    return GaussianTerm(g, mpc(coupling.A_last, coupling.B_last), mpc(C, D))


def gamma_theta(coupling: CouplingModel, traj: TrajectorySelector, k: int, sampling_interval):
    """(gamma_f, Theta) for trajectory n at sample k.

    gamma_f = exp((4 pi^2 / T_s^2) xs^T H xs) exp(2 pi c.xs k) with xs the lattice point;
    H is complex, so gamma_f is complex and its phase is the H_I part of Theta.
    """
    Ts = to_real(sampling_interval)
    xs = traj.x_scaled(Ts)
    two_pi = 2 * gmpy2.const_pi()
    gamma = gmpy2.exp(two_pi * two_pi / (Ts * Ts) * quadratic_form(coupling.H, xs)
                      + two_pi * _dot(coupling.c_vec, xs) * k)
    HI = coupling.H_I
    n = len(traj.x)
    quad_im = gmpy2.fsum([HI[r, c] * traj.x[r] * traj.x[c] for r in range(n) for c in range(n)])
    theta = quad_im + _dot(coupling.d_vec, traj.x) * k * Ts
    return gamma, theta


def lattice_phase(coupling: CouplingModel, traj: TrajectorySelector, k: int, sampling_interval) -> mpc:
    """f(k xs) = exp(i 2 pi d.xs k)."""
    xs = traj.x_scaled(sampling_interval)
    return gmpy2.exp(mpc(0, 2 * gmpy2.const_pi() * _dot(coupling.d_vec, xs) * k))


# ---------------------------------------------------------------- sample sweep

def _sweep_block(payload):
    """Evaluate sum_n exp(g + a x^2 + b x) at x = k T_s for k in [k0, k1)."""
    bits, g, a, b, Ts, k0, k1 = payload
    with gmpy2.context(gmpy2.get_context(), precision=bits, real_prec=bits, imag_prec=bits):
        g = np.array(g, dtype=object)
        a = np.array(a, dtype=object)
        b = np.array(b, dtype=object)
        exp = np.frompyfunc(gmpy2.exp, 1, 1)
        q = exp(2 * a * Ts * Ts)
        out = []
        term = ratio = None
        for k in range(k0, k1):
            if term is None or (k - k0) % ANCHOR_STRIDE == 0:
                x = Ts * k
                term = exp(g + a * x * x + b * x)
                ratio = exp(a * Ts * Ts * (2 * k + 1) + b * Ts)
            else:
                term = term * ratio
                ratio = ratio * q
            re = gmpy2.fsum([t.real for t in term])
            im = gmpy2.fsum([t.imag for t in term])
            out.append(mpc(re, im))
        return out


def superpose(terms: Sequence[GaussianTerm], k_values: Sequence[int], sampling_interval,
              workers: int = 1) -> list:
    """Psi(k T_s) = sum of all terms, for consecutive integer k.

    Blocks start on fixed multiples of the anchor stride from the first k, so
    the result does not depend on the number of workers.
    """
    ks = list(k_values)
    if not ks:
        return []
    if ks != list(range(ks[0], ks[0] + len(ks))):
        raise ValueError("sample indices must be consecutive")
    Ts = to_real(sampling_interval)
    bits = gmpy2.get_context().precision
    g = [t.g for t in terms]
    a = [t.a for t in terms]
    b = [t.b for t in terms]
    k0, k1 = ks[0], ks[-1] + 1
    blocks = [(bits, g, a, b, Ts, s, min(s + ANCHOR_STRIDE, k1)) for s in range(k0, k1, ANCHOR_STRIDE)]
    if workers <= 1 or len(blocks) == 1:
        parts = [_sweep_block(p) for p in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sweep_block, blocks))
    return [v for part in parts for v in part]


@dataclass(frozen=True)
class ScreenSamples:
    k: tuple
    positions: tuple
    raw: tuple
    normalized: tuple
    rescaled: tuple
    lam: mpfr
    A_last: mpfr
    sampling_interval: mpfr
    path_count: int
    exotic_order: int | None = None

    def __len__(self):
        return len(self.k)

    def consistency_error(self) -> mpfr:
        """Largest relative mismatch between the three sample sequences."""
        worst = mpfr(0)
        for x, r, nrm, res in zip(self.positions, self.raw, self.normalized, self.rescaled):
            for lhs, rhs in ((nrm * self.lam, r), (res * gmpy2.exp(2 * self.A_last * x * x), nrm)):
                scale = max(abs(lhs), abs(rhs))
                if scale:
                    worst = max(worst, abs(lhs - rhs) / scale)
        return worst

    def rescaled_from(self, k0: int, count: int) -> list:
        idx = self.k.index(k0)
        if idx + count > len(self.k):
            raise ValueError(f"need samples k in [{k0}, {k0 + count - 1}]")
        return list(self.rescaled[idx: idx + count])

    def to_csv(self, digits: int | None = None) -> str:
        if digits is None:
            digits = int(math.ceil(gmpy2.get_context().precision * 0.30103)) + 2
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["k", "x_meters", "raw", "normalized", "rescaled"]
        if self.exotic_order is not None:
            header.append("exotic_order")
        w.writerow(header)
        for k, x, r, nrm, res in zip(self.k, self.positions, self.raw, self.normalized, self.rescaled):
            row = [k, format_real(x, digits), format_real(r, digits), format_real(nrm, digits), format_real(res, digits)]
            if self.exotic_order is not None:
                row.append(self.exotic_order)
            w.writerow(row)
        return buf.getvalue()


def samples_from_amplitudes(psi: Sequence, k_values: Sequence[int], coupling: CouplingModel,
                            sampling_interval, path_count: int, exotic_order=None) -> ScreenSamples:
    Ts = to_real(sampling_interval)
    lam = coupling.lambda_prefactor
    A = coupling.A_last
    pos, raw, nrm, res = [], [], [], []
    for k, v in zip(k_values, psi):
        x = Ts * k
        r = cabs2(v)
        envelope = gmpy2.exp(-2 * A * x * x)
        if gmpy2.is_infinite(envelope):
            raise IntensityRangeError(
                f"envelope removal overflows at k = {k}; shrink the sample range or raise the precision")
        pos.append(x)
        raw.append(r)
        nrm.append(r / lam)
        res.append(r / lam * envelope)
    out = ScreenSamples(tuple(k_values), tuple(pos), tuple(raw), tuple(nrm), tuple(res),
                        lam, A, Ts, path_count, exotic_order)
    tol = mpfr(10) ** (6 - int(gmpy2.get_context().precision * 0.30103))
    err = out.consistency_error()
    if err > tol:
        raise ArithmeticError(f"intensity sequences disagree by {err}")
    return out


def screen_intensity(coupling: CouplingModel, paths: Iterable[TrajectorySelector], k_range,
                     sampling_interval, workers: int = 1) -> ScreenSamples:
    """Raw, normalized and envelope-free intensity at x = k T_s."""
    terms = [path_term(coupling, p) for p in paths]
    ks = list(k_range)
    psi = superpose(terms, ks, sampling_interval, workers)
    return samples_from_amplitudes(psi, ks, coupling, sampling_interval, len(terms))


def read_samples_csv(text: str):
    """Parse an intensity CSV back into (k list, rescaled list) at the active precision."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("intensity file has no rows")
    for col in ("k", "rescaled"):
        if col not in rows[0]:
            raise ValueError(f"intensity file lacks column '{col}'")
    ks = [int(r["k"]) for r in rows]
    return ks, [mpfr(r["rescaled"]) for r in rows], rows
