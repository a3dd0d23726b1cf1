"""Period finding on the envelope-free intensity.

Lattice values b[n] = d.x_n T_s / (2 pi) are near-integer multiples of 1/k~
when the set-up encodes a common denominator k~.  This module measures how
close they are (SDA error curves), maps them onto the integer lattice, scans
IFFT spectra of the intensity for the period, checks the sufficient
conditions for a maximum at k~, and bounds estimator variance under noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr
from scipy.signal import find_peaks

from .config import NoiseModel
from .intensity import ScreenSamples, TrajectorySelector
from .numerics import cabs2, compensated_complex_sum, ifft_normalized, real_sum, to_real
from .propagator import CouplingModel, quadratic_form

DEFAULT_LATTICE_TOL = 1e-6
DEFAULT_WINDOW = 0.05


class LatticeMapError(ValueError):
    def __init__(self, n: int, error, k_tilde: int):
        self.n, self.error, self.k_tilde = n, error, k_tilde
        super().__init__(f"k~ = {k_tilde}: path {n} is {float(error):.3g} away from the integer lattice")


# ---------------------------------------------------------------- SDA

def b_values(d_vec: Sequence, paths: Sequence[TrajectorySelector], sampling_interval) -> list:
    """b[n] = d . x_n^s with x_n^s = x_n T_s / (2 pi)."""
    f = to_real(sampling_interval) / (2 * gmpy2.const_pi())
    d = [to_real(v) for v in d_vec]
    return [real_sum(dj * xj for dj, xj in zip(d, p.x)) * f for p in paths]


def _dist_to_int(v: mpfr) -> mpfr:
    return abs(v - gmpy2.rint(v))


@dataclass(frozen=True)
class SdaErrorCurve:
    M: tuple
    eps: tuple          # eps[i][n] for M = M[i]
    eps_mean: tuple
    eps_max: tuple
    eps_min: tuple

    def at(self, M: int) -> int:
        return self.M.index(M)

    def argmin_mean(self, m_min: int = 1, m_max: int | None = None) -> int:
        best = None
        for M, e in zip(self.M, self.eps_mean):
            if M < m_min or (m_max is not None and M > m_max):
                continue
            if best is None or e < best[1]:
                best = (M, e)
        if best is None:
            raise ValueError("empty search range")
        return best[0]


def sda_errors(b: Sequence, K_pre: int) -> SdaErrorCurve:
    if K_pre < 1:
        raise ValueError("K_pre must be >= 1")
    b = [to_real(v) for v in b]
    Ms, eps, mean, mx, mn = [], [], [], [], []
    n = len(b)
    for M in range(1, K_pre + 1):
        row = tuple(_dist_to_int(M * v) for v in b)
        Ms.append(M)
        eps.append(row)
        mean.append(real_sum(row) / n)
        mx.append(max(row))
        mn.append(min(row))
    return SdaErrorCurve(tuple(Ms), tuple(eps), tuple(mean), tuple(mx), tuple(mn))


def trivial_regime_bound(b: Sequence) -> int:
    """Smallest M at which some M |b[n]| can reach 1/2; below it eps is just M |b|."""
    top = max(abs(to_real(v)) for v in b)
    if top == 0:
        return 1
    return max(1, int(gmpy2.ceil(mpfr("0.5") / top)))


def lattice_map(b: Sequence, k_tilde: int, tol=DEFAULT_LATTICE_TOL) -> list:
    """G~_2[n] = round(k~ b[n]) mod k~, or LatticeMapError naming the worst path."""
    if k_tilde < 1:
        raise ValueError("k_tilde must be >= 1")
    tol = to_real(tol)
    out = []
    worst = (mpfr(-1), -1)
    for n, v in enumerate(b):
        prod = k_tilde * to_real(v)
        r = gmpy2.rint(prod)
        err = abs(prod - r)
        if err > worst[0]:
            worst = (err, n)
        out.append(int(r) % k_tilde)
    if worst[0] > tol:
        raise LatticeMapError(worst[1], worst[0], k_tilde)
    return out


# ---------------------------------------------------------------- damped-sinusoid model

@dataclass(frozen=True)
class PeriodModel:
    """I~[k] = |sum_n g3[n] exp(g1[n] k) exp(i 2 pi G2[n] k / k~)|^2."""
    g1: tuple
    g3: tuple
    G2: tuple
    k_tilde: int

    @property
    def path_count(self) -> int:
        return len(self.g1)

    def amplitude(self, k, k_tilde=None, offsets=None) -> mpc:
        kt = to_real(self.k_tilde if k_tilde is None else k_tilde)
        o = self.G2 if offsets is None else offsets
        w = 2 * gmpy2.const_pi() / kt
        return compensated_complex_sum(
            g3 * gmpy2.exp(mpc(g1 * k, w * on * k)) for g1, g3, on in zip(self.g1, self.g3, o))

    def intensity(self, k, k_tilde=None) -> mpfr:
        return cabs2(self.amplitude(k, k_tilde))

    def H(self, k, offsets=None) -> mpc:
        """sum_n g3 exp(g1 (k~ - k)) exp(-i 2 pi o[n] k / k~)."""
        o = self.G2 if offsets is None else offsets
        w = 2 * gmpy2.const_pi() / self.k_tilde
        return compensated_complex_sum(
            g3 * gmpy2.exp(mpc(g1 * (self.k_tilde - k), -w * on * k)) for g1, g3, on in zip(self.g1, self.g3, o))

    def pairs(self):
        """(A[n,l], alpha[n,l], dG2[n,l]) over all ordered pairs."""
        for n in range(self.path_count):
            for l in range(self.path_count):
                yield (self.g3[n] * self.g3[l].conjugate(), self.g1[n] + self.g1[l], self.G2[l] - self.G2[n])


def period_model(coupling: CouplingModel, paths: Sequence[TrajectorySelector], sampling_interval,
                 k_tilde: int, tol=DEFAULT_LATTICE_TOL, d_vec=None) -> PeriodModel:
    Ts = to_real(sampling_interval)
    d = coupling.d_vec if d_vec is None else d_vec
    b = b_values(d, paths, Ts)
    G2 = lattice_map(b, k_tilde, tol)
    g1 = tuple(real_sum(c * x for c, x in zip(coupling.c_vec, p.x)) * Ts for p in paths)
    g3 = tuple(gmpy2.exp(quadratic_form(coupling.H, p.x)) for p in paths)
    return PeriodModel(g1, g3, tuple(G2), k_tilde)


# ---------------------------------------------------------------- IFFT scan

@dataclass(frozen=True)
class SpectralEntry:
    M: int
    spectrum: tuple
    R: mpfr
    degenerate: bool
    gamma: dict | None = None           # h -> tuple over p of Gamma_M[p/M, h/k~]
    identity_error: mpfr | None = None


def ratio_metric(spectrum: Sequence):
    """|X[0]| over the mean of |X[p]|, p = 1..M-1; (R, degenerate)."""
    M = len(spectrum)
    if M < 2:
        raise ValueError("need M >= 2")
    head = abs(spectrum[0])
    rest = real_sum(abs(v) for v in spectrum[1:]) / (M - 1)
    floor = mpfr(10) ** (4 - int(gmpy2.get_context().precision * 0.30103)) * head
    if rest == 0 or rest <= floor:
        return mpfr("inf"), True
    return head / rest, False


def gamma_decomposition(model: PeriodModel, M: int) -> dict:
    """Gamma_M[p/M, h/k~] for every residue class h of dG2 mod k~."""
    kt = model.k_tilde
    two_pi = 2 * gmpy2.const_pi()
    scale = gmpy2.rec_sqrt(mpfr(M))
    small = mpfr(10) ** (-int(gmpy2.get_context().precision * 0.30103) // 2)
    classes: dict = {}
    for A, alpha, dG in model.pairs():
        classes.setdefault(dG % kt, []).append((A, alpha, dG))
    out = {}
    for h in range(kt):
        members = classes.get(h, [])
        row = []
        for p in range(M):
            acc = []
            for A, alpha, dG in members:
                gam = gmpy2.exp(mpc(alpha, -two_pi * (mpfr(dG) / kt - mpfr(p) / M)))
                if abs(1 - gam) < small:
                    geo = compensated_complex_sum(gam ** k for k in range(M))
                else:
                    geo = (1 - gmpy2.exp(mpc(alpha * M, -two_pi * mpfr(dG) * M / kt))) / (1 - gam)
                acc.append(A * geo)
            row.append(scale * compensated_complex_sum(acc))
        out[h] = tuple(row)
    return out


def ifft_scan(samples: Sequence, M: int, model: PeriodModel | None = None) -> SpectralEntry:
    """IFFT of the first M samples, R[M], and optionally the Gamma terms of a period model.

    With a model the residue-class terms must add up to the transform of the
    model intensity; the largest relative mismatch is stored.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    if len(samples) < M:
        raise ValueError(f"need {M} samples, have {len(samples)}")
    spec = ifft_normalized(list(samples[:M]))
    R, degenerate = ratio_metric(spec)
    gamma = err = None
    if model is not None:
        gamma = gamma_decomposition(model, M)
        target = ifft_normalized([model.intensity(k) for k in range(M)])
        scale = max(abs(v) for v in target)
        err = mpfr(0)
        for p in range(M):
            total = compensated_complex_sum(gamma[h][p] for h in gamma)
            err = max(err, abs(total - target[p]) / scale)
    return SpectralEntry(M, tuple(spec), R, degenerate, gamma, err)


def r_curve(samples: Sequence, m_max: int, m_min: int = 2):
    """(M values, R values, degenerate flags) for M in [m_min, m_max]."""
    Ms, Rs, flags = [], [], []
    for M in range(m_min, min(m_max, len(samples)) + 1):
        spec = ifft_normalized(list(samples[:M]))
        R, deg = ratio_metric(spec)
        Ms.append(M)
        Rs.append(R)
        flags.append(deg)
    return Ms, Rs, flags


def local_maxima(values: Sequence, prominence: float = 0.0) -> list:
    """Indices of interior local maxima with at least the given prominence."""
    arr = np.array([float(v) for v in values])
    if not np.all(np.isfinite(arr)):
        arr = np.where(np.isfinite(arr), arr, np.nanmax(arr[np.isfinite(arr)], initial=0.0) * 10 + 1)
    peaks, _ = find_peaks(arr, prominence=prominence if prominence > 0 else None)
    return [int(i) for i in peaks]


@dataclass(frozen=True)
class Candidate:
    M: int
    R: float
    refined: int | None = None
    eps_mean: float | None = None
    eps_max: float | None = None
    lattice_ok: bool | None = None


def verify_candidates(candidates: Sequence[Candidate], curve: SdaErrorCurve, window: float = DEFAULT_WINDOW,
                      tol=DEFAULT_LATTICE_TOL, m_min: int = 1) -> list:
    """Refine each R[M] peak to the best SDA denominator within +-window and test it on the lattice."""
    out = []
    K = curve.M[-1]
    for c in candidates:
        lo = max(m_min, int(math.ceil(c.M * (1 - window))))
        hi = min(K, int(math.floor(c.M * (1 + window))))
        if lo > hi:
            out.append(c)
            continue
        best = curve.argmin_mean(lo, hi)
        i = curve.at(best)
        out.append(replace(c, refined=best, eps_mean=float(curve.eps_mean[i]), eps_max=float(curve.eps_max[i]),
                           lattice_ok=bool(curve.eps_max[i] <= to_real(tol))))
    return out


@dataclass
class PeriodEstimate:
    candidates: list
    r_M: list
    r_values: list
    degenerate: bool
    intensity_maxima: list
    prominence: float
    top: int | None = None
    sda: SdaErrorCurve | None = None
    theorem1: "Theorem1Report | None" = None
    crb: "CrbReport | None" = None
    notes: list = field(default_factory=list)


def estimate_period(samples: Sequence, m_max: int, m_min: int = 2, prominence: float = 0.0,
                    b: Sequence | None = None, window: float = DEFAULT_WINDOW,
                    tol=DEFAULT_LATTICE_TOL) -> PeriodEstimate:
    """R[M] scan with peak extraction; with lattice values b, peaks are refined and verified."""
    Ms, Rs, flags = r_curve(samples, m_max, m_min)
    finite = [not f for f in flags]
    degenerate = not any(finite)
    peaks = local_maxima(Rs, prominence) if not degenerate else []
    cands = [Candidate(Ms[i], float(Rs[i])) for i in peaks]
    I = [float(v) for v in samples[: m_max + 1]]
    imax = [k for k in range(1, len(I) - 1) if I[k] > I[k - 1] and I[k] > I[k + 1]]
    est = PeriodEstimate(cands, Ms, Rs, degenerate, imax, prominence)
    if b is not None:
        curve = sda_errors(b, m_max)
        est.sda = curve
        est.candidates = verify_candidates(cands, curve, window, tol, trivial_regime_bound(b))
        refined = [c.refined for c in est.candidates if c.refined is not None]
        est.top = min(refined) if refined else None
    elif cands:
        est.top = cands[0].M
    return est


# ---------------------------------------------------------------- Theorem 1

@dataclass(frozen=True)
class Theorem1Report:
    k_tilde: int
    lattice_ok: bool
    condition2a: bool           # |H[k, G2]| <= |H[k, 0]| on [0, k~]
    condition2a_strict: bool    # strict on [1, k~ - 1]
    condition2b: bool           # |H[k, 0]| strictly decreasing on [0, k~]
    condition2b_as_stated: bool  # |H[k, 0]| strictly increasing on [0, k~]
    conclusion_asserted: bool
    conclusion_holds: bool | None
    violations: tuple = ()


def theorem1_check(model: PeriodModel, measured: Sequence | None = None) -> Theorem1Report:
    """Evaluate the sufficient conditions for I~[k~] > I~[k], k < k~.

    The conclusion is asserted (and checked on the model, and on ``measured``
    samples when given) only when every condition holds.
    """
    kt = model.k_tilde
    tol = mpfr(10) ** (6 - int(gmpy2.get_context().precision * 0.30103))
    zero = tuple(0 for _ in model.G2)
    h_g = [abs(model.H(k)) for k in range(kt + 1)]
    h_0 = [abs(model.H(k, zero)) for k in range(kt + 1)]
    viol = []
    c2a = all(hg <= h0 * (1 + tol) for hg, h0 in zip(h_g, h_0))
    c2a_strict = c2a and all(h_g[k] < h_0[k] for k in range(1, kt))
    if not c2a:
        viol.append("phase-weighted sum exceeds the phase-free sum")
    c2b = all(h_0[k + 1] < h_0[k] for k in range(kt))
    stated = all(h_0[k + 1] > h_0[k] for k in range(kt))
    if not c2b:
        viol.append("phase-free sum is not strictly decreasing in k")
    asserted = c2a and c2b
    holds = None
    if asserted:
        I = [model.intensity(k) for k in range(kt + 1)]
        holds = all(I[kt] > I[k] for k in range(kt))
        if measured is not None and len(measured) > kt:
            holds = holds and all(measured[kt] > measured[k] for k in range(kt))
        if not holds:
            viol.append("maximum at k~ not attained although the conditions hold")
    return Theorem1Report(kt, True, c2a, c2a_strict, c2b, stated, asserted, holds, tuple(viol))


# ---------------------------------------------------------------- noise and CRB

def sigma_from_snr(samples: ScreenSamples, snr_db: float) -> mpfr:
    """Constant sigma giving the requested SNR against the mean power of I_norm."""
    power = real_sum(v * v for v in samples.normalized) / len(samples.normalized)
    return gmpy2.sqrt(power / mpfr(10) ** (mpfr(snr_db) / 10))


def noise_sigmas(samples: ScreenSamples, model: NoiseModel) -> list:
    n = len(samples)
    if model.sigma is not None:
        if isinstance(model.sigma, tuple):
            if len(model.sigma) != n:
                raise ValueError(f"{len(model.sigma)} sigma values for {n} samples")
            return [to_real(s) for s in model.sigma]
        return [to_real(model.sigma)] * n
    return [sigma_from_snr(samples, model.snr_db)] * n


def add_noise(samples: ScreenSamples, model: NoiseModel) -> ScreenSamples:
    """Gaussian receiver noise on I_norm; the rescaled sequence carries the amplified noise.

    Noisy samples may dip below zero; they are not clipped.
    """
    sig = noise_sigmas(samples, model)
    rng = np.random.default_rng(model.seed)
    unit = rng.standard_normal(len(samples))
    A = samples.A_last
    nrm, res, raw = [], [], []
    for x, v, r, s, u in zip(samples.positions, samples.normalized, samples.rescaled, sig, unit):
        noise = s * mpfr(float(u))
        nrm.append(v + noise)
        res.append(r + gmpy2.exp(-2 * A * x * x) * noise)
        raw.append((v + noise) * samples.lam)
    return replace(samples, raw=tuple(raw), normalized=tuple(nrm), rescaled=tuple(res))


@dataclass(frozen=True)
class CrbReport:
    fisher: mpfr
    crb: mpfr
    bias_derivative: mpfr
    positions: tuple
    derivatives: tuple
    sigma_tilde: tuple


def intensity_derivative(model: PeriodModel, k: int) -> mpfr:
    """d I~[k] / d k~ from the pair expansion."""
    kt = to_real(model.k_tilde)
    two_pi = 2 * gmpy2.const_pi()
    acc = []
    for A, alpha, dG in model.pairs():
        if dG == 0:
            continue
        phase = -two_pi * dG * k / kt
        acc.append(A * gmpy2.exp(mpc(alpha * k, phase)) * mpc(0, two_pi * dG * k / (kt * kt)))
    return compensated_complex_sum(acc).real


def crb(model: PeriodModel, positions: Sequence[int], sigma, A_last, sampling_interval,
        bias_derivative=0, derivatives: Sequence | None = None) -> CrbReport:
    """Cramer-Rao bound on k~ from samples at ``positions`` with noise sigma (scalar or per sample)."""
    Ts = to_real(sampling_interval)
    A = to_real(A_last)
    pos = list(positions)
    sig = list(sigma) if isinstance(sigma, (list, tuple)) else [sigma] * len(pos)
    if derivatives is None:
        derivatives = [intensity_derivative(model, k) for k in pos]
    st = []
    terms = []
    for k, s, dI in zip(pos, sig, derivatives):
        s = to_real(s)
        x = Ts * k
        s_t = gmpy2.exp(-2 * A * x * x) * s
        if s_t <= 0:
            raise ValueError("noise deviation must be positive at every sample")
        st.append(s_t)
        terms.append((dI / s_t) ** 2)
    fisher = real_sum(terms)
    b1 = to_real(bias_derivative)
    bound = mpfr("inf") if fisher == 0 else (1 + b1) ** 2 / fisher
    return CrbReport(fisher, bound, b1, tuple(pos), tuple(derivatives), tuple(st))


def crb_curve(model: PeriodModel, counts: Sequence[int], sigma, A_last, sampling_interval,
              bias_derivative=0) -> list:
    """CRB for samples k = 0..M-1 at each M in ``counts`` (derivatives computed once)."""
    top = max(counts)
    derivs = [intensity_derivative(model, k) for k in range(top)]
    sig = list(sigma) if isinstance(sigma, (list, tuple)) else [sigma] * top
    return [crb(model, range(M), sig[:M], A_last, sampling_interval, bias_derivative, derivs[:M]) for M in counts]
