"""Same-plane ("exotic") slit visits and their contribution to the detector intensity.

On plane j a trajectory enters through one slit and may then hop between
slits of the same plane up to N_E times before moving on.  Each hop of length
dx is free flight for t = m dx / dp_j, where dp_j is the momentum spread of
the wave incident on plane j.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import gmpy2
from gmpy2 import mpc, mpfr

from .config import PhysicalConstants, SetupGeometry, derive_schedule, geometry_reals
from .intensity import (ScreenSamples, TrajectorySelector, enumerate_paths, path_term,
                        samples_from_amplitudes, superpose)
from .numerics import compensated_complex_sum, to_real
from .propagator import (CouplingModel, GaussianTerm, NonNormalizableError,
                         PlaneIterates, apply_plane, initial_term, step_coefficients)

STATE_TERM_CAP = 5000


class PathCapExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------- counting

@dataclass(frozen=True)
class ExoticCounts:
    per_plane_exotic: tuple     # S_T * sum_{k=1}^{N_E} (S_T - 1)^k
    per_plane_total: tuple      # same sum from k = 0, classical entries included
    cumulative_exotic: tuple    # running products, last entry is the sensor
    cumulative_total: tuple

    @property
    def sensor_total(self) -> int:
        return self.cumulative_total[-1]


def plane_sequence_count(slits: int, order: int, first: int = 0) -> int:
    return slits * sum((slits - 1) ** k for k in range(first, order + 1))


def count_exotic(slits_per_plane: Sequence[int] | SetupGeometry, order: int) -> ExoticCounts:
    if order < 0:
        raise ValueError("exotic order must be >= 0")
    if isinstance(slits_per_plane, SetupGeometry):
        slits_per_plane = slits_per_plane.slits_per_plane
    ex = tuple(plane_sequence_count(s, order, first=1) for s in slits_per_plane)
    tot = tuple(plane_sequence_count(s, order) for s in slits_per_plane)
    return ExoticCounts(ex, tot, tuple(itertools.accumulate(ex, lambda a, b: a * b)),
                        tuple(itertools.accumulate(tot, lambda a, b: a * b)))


def plane_visit_sequences(slits: int, order: int) -> list:
    """All (entrance, hop_1, ..., hop_k) with k <= order and no slit repeated back to back."""
    out = []
    for entrance in range(slits):
        for k in range(order + 1):
            for hops in itertools.product(range(slits - 1), repeat=k):
                seq = [entrance]
                for h in hops:
                    seq.append(h if h < seq[-1] else h + 1)
                out.append(tuple(seq))
    return out


@dataclass(frozen=True)
class ExoticTrajectory:
    n: int
    base: TrajectorySelector
    visits: tuple       # per plane: (entrance, hop_1, ..., hop_k)

    @property
    def hop_counts(self) -> tuple:
        return tuple(len(v) - 1 for v in self.visits)

    @property
    def is_classical(self) -> bool:
        return all(len(v) == 1 for v in self.visits)

    def hop_distances(self, geom: SetupGeometry) -> tuple:
        """|X_{j,s_k} - X_{j,s_{k-1}}| for each hop, per plane."""
        out = []
        for centers, seq in zip(geom.slit_centers, self.visits):
            out.append(tuple(abs(to_real(centers[b]) - to_real(centers[a])) for a, b in zip(seq, seq[1:])))
        return tuple(out)


def enumerate_exotic(geom: SetupGeometry, order: int) -> Iterator[ExoticTrajectory]:
    centers = [[to_real(x) for x in plane] for plane in geom.slit_centers]
    per_plane = [plane_visit_sequences(len(c), order) for c in centers]
    radices = geom.slits_per_plane
    for n, visits in enumerate(itertools.product(*per_plane)):
        s = tuple(v[0] for v in visits)
        base_n = 0
        for d, r in zip(s, radices):
            base_n = base_n * r + d
        base = TrajectorySelector(base_n, s, tuple(centers[j][i] for j, i in enumerate(s)))
        yield ExoticTrajectory(n, base, visits)


# ---------------------------------------------------------------- momentum spread

@dataclass(frozen=True)
class MomentumSpread:
    plane: int
    p_mean: mpfr
    p_sq_mean: mpfr
    delta_p: mpfr
    delta_v: mpfr


def _pair_integrals(ti: GaussianTerm, tl: GaussianTerm):
    """int conj(psi_i) x^q psi_l dx for q = 0, 1, 2."""
    P = -(ti.a.conjugate() + tl.a)
    Q = ti.b.conjugate() + tl.b
    G = ti.g.conjugate() + tl.g
    I0 = gmpy2.sqrt(gmpy2.const_pi() / P) * gmpy2.exp(Q * Q / (4 * P) + G)
    I1 = I0 * Q / (2 * P)
    I2 = I0 * (1 / (2 * P) + Q * Q / (4 * P * P))
    return I0, I1, I2


def gaussian_sum_moments(terms: Sequence[GaussianTerm], hbar):
    """(norm, <p>, <p^2>) of an unnormalized Gaussian sum; <.> already divided by the norm."""
    if not terms:
        raise ValueError("empty state")
    for t in terms:
        if t.a.real >= 0:
            raise NonNormalizableError("state term with non-negative envelope coefficient")
    hbar = to_real(hbar)
    norm, p1, p2 = [], [], []
    for ti in terms:
        for tl in terms:
            I0, I1, I2 = _pair_integrals(ti, tl)
            a, b = tl.a, tl.b
            norm.append(I0)
            p1.append(2 * a * I1 + b * I0)
            p2.append(4 * a * a * I2 + 4 * a * b * I1 + (b * b + 2 * a) * I0)
    n = compensated_complex_sum(norm)
    mean = (mpc(0, -1) * hbar * compensated_complex_sum(p1) / n)
    sq = (-hbar * hbar * compensated_complex_sum(p2) / n)
    return n.real, mean.real, sq.real


def momentum_spread(terms: Sequence[GaussianTerm], consts: PhysicalConstants, plane: int = 0) -> MomentumSpread:
    _, mean, sq = gaussian_sum_moments(terms, consts.hbar)
    var = sq - mean * mean
    if var <= 0:
        raise ArithmeticError(f"non-positive momentum variance {var} on plane {plane}")
    dp = gmpy2.sqrt(var)
    return MomentumSpread(plane, mean, sq, dp, dp / to_real(consts.mass))


# ---------------------------------------------------------------- plane-wise evolution

class _StepCache:
    """Memoized plane coefficients keyed by the incoming envelope and the step."""

    def __init__(self, consts: PhysicalConstants):
        self.m = to_real(consts.mass)
        self.hbar = to_real(consts.hbar)
        self.table = {}

    def __call__(self, a: mpc, beta, dt, plane) -> PlaneIterates:
        key = (a, beta, dt)
        it = self.table.get(key)
        if it is None:
            it = step_coefficients(a.real, a.imag, beta, dt, self.m, self.hbar, plane)
            self.table[key] = it
        return it


@dataclass
class ExoticModel:
    """Everything needed to evolve exotic trajectories for one geometry."""
    geom: SetupGeometry
    consts: PhysicalConstants
    coupling: CouplingModel
    order: int
    spreads: tuple          # MomentumSpread per slit plane
    centers: list
    betas: list
    flight: tuple           # t_{j,j+1} for j = 1..N-1
    cache: _StepCache

    def hop_time(self, plane_index: int, distance) -> mpfr:
        return to_real(self.consts.mass) * distance / self.spreads[plane_index].delta_p

    def plane_terms(self, term: GaussianTerm, j: int, sequences=None):
        """Yield (sequence, outgoing term) for every visit sequence on slit plane j (0-based).

        Sequences sharing a prefix share its evolution.
        """
        X = self.centers[j]
        beta = self.betas[j]
        S = len(X)
        plane = j + 1

        def walk(state, seq):
            last = seq[-1]
            it = self.cache(state.a, beta, self.flight[j], plane)
            yield seq, apply_plane(state, X[last], it)
            if len(seq) - 1 >= self.order:
                return
            for nxt in range(S):
                if nxt == last:
                    continue
                dt = self.hop_time(j, abs(X[nxt] - X[last]))
                hop = self.cache(state.a, beta, dt, plane)
                yield from walk(apply_plane(state, X[last], hop), seq + (nxt,))

        for entrance in range(S):
            yield from walk(term, (entrance,))

    def evolve(self, traj: ExoticTrajectory) -> GaussianTerm:
        """Detector-plane term of a single trajectory (no prefix sharing)."""
        term = initial_term(self.coupling.initial)
        for j, seq in enumerate(traj.visits):
            X = self.centers[j]
            beta = self.betas[j]
            for cur, nxt in zip(seq, seq[1:]):
                dt = self.hop_time(j, abs(X[nxt] - X[cur]))
                term = apply_plane(term, X[cur], self.cache(term.a, beta, dt, j + 1))
            term = apply_plane(term, X[seq[-1]], self.cache(term.a, beta, self.flight[j], j + 1))
        return term


def classical_plane_states(coupling: CouplingModel, geom: SetupGeometry) -> list:
    """Incident wave on each slit plane as a list of terms, summed over classical predecessors."""
    centers, _ = geometry_reals(geom)
    states = [[initial_term(coupling.initial)]]
    for j, it in enumerate(coupling.iterates[:-1]):
        states.append([apply_plane(t, X, it) for t in states[-1] for X in centers[j]])
    return states


def build_exotic_model(coupling: CouplingModel, geom: SetupGeometry, consts: PhysicalConstants,
                       order: int, spread_source: str = "classical") -> ExoticModel:
    centers, betas = geometry_reals(geom)
    sched = derive_schedule(geom, consts)
    model = ExoticModel(geom, consts, coupling, order, (), centers, betas, tuple(sched.durations[1:]),
                        _StepCache(consts))
    if spread_source == "classical":
        states = classical_plane_states(coupling, geom)
        model.spreads = tuple(momentum_spread(s, consts, plane=j + 1) for j, s in enumerate(states))
        return model
    if spread_source != "exotic":
        raise ValueError(f"unknown spread source {spread_source!r}")
    # each plane's spread from the incident wave including earlier exotic visits
    spreads = []
    state = [initial_term(coupling.initial)]
    for j in range(len(centers)):
        if len(state) > STATE_TERM_CAP:
            raise PathCapExceeded(f"incident state on plane {j + 1} has {len(state)} terms")
        spreads.append(momentum_spread(state, consts, plane=j + 1))
        model.spreads = tuple(spreads)
        if j + 1 < len(centers):
            state = [out for t in state for _, out in model.plane_terms(t, j)]
    return model


def exotic_amplitude(model: ExoticModel, traj: ExoticTrajectory, x) -> mpc:
    if traj.is_classical:
        return path_term(model.coupling, traj.base).value(to_real(x))
    return model.evolve(traj).value(to_real(x))


def exotic_terms(model: ExoticModel) -> list:
    """Detector terms of every trajectory up to the model's order; classical ones use the coupling form."""
    classical = {p.s: path_term(model.coupling, p) for p in enumerate_paths(model.geom)}
    terms = []

    def descend(term, j, entrances, all_classical):
        if j == len(model.centers):
            terms.append(classical[entrances] if all_classical else term)
            return
        for seq, out in model.plane_terms(term, j):
            descend(out, j + 1, entrances + (seq[0],), all_classical and len(seq) == 1)

    descend(initial_term(model.coupling.initial), 0, (), True)
    return terms


def exotic_screen_intensity(coupling: CouplingModel, geom: SetupGeometry, consts: PhysicalConstants,
                            order: int, k_range, sampling_interval, path_cap: int = 1_000_000,
                            workers: int = 1, spread_source: str = "classical") -> ScreenSamples:
    counts = count_exotic(geom, order)
    if counts.sensor_total > path_cap:
        raise PathCapExceeded(f"{counts.sensor_total} sensor paths exceed the cap of {path_cap}")
    if order == 0:
        terms = [path_term(coupling, p) for p in enumerate_paths(geom)]
    else:
        model = build_exotic_model(coupling, geom, consts, order, spread_source)
        terms = exotic_terms(model)
    if len(terms) != counts.sensor_total:
        raise AssertionError(f"evaluated {len(terms)} trajectories, expected {counts.sensor_total}")
    ks = list(k_range)
    psi = superpose(terms, ks, sampling_interval, workers)
    return samples_from_amplitudes(psi, ks, coupling, sampling_interval, len(terms), exotic_order=order)


def max_abs_difference(a: ScreenSamples, b: ScreenSamples) -> mpfr:
    if a.k != b.k:
        raise ValueError("sample ranges differ")
    return max(abs(x - y) for x, y in zip(a.rescaled, b.rescaled))


def sequences_total(slits: int, order: int) -> int:
    return len(plane_visit_sequences(slits, order))

