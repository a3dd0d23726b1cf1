from dataclasses import replace
from decimal import Decimal

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpc, mpfr
from hypothesis import given, settings, strategies as st

from qpc.config import SetupGeometry
from qpc.numerics import PrecisionPolicy, cabs2, max_relative_difference, relative_difference, to_real
from qpc.intensity import (IntensityRangeError, decode_path, encode_path, enumerate_paths, gamma_theta,
                           lattice_phase, path_amplitude, path_term, read_samples_csv, screen_intensity,
                           superpose)

from conftest import coupling, paths

TOL = PrecisionPolicy(64).tolerance
TS = Decimal("1e-6")


def test_path_counts():
    assert len(paths("sim1")) == 25
    assert len(paths("sim2")) == 81
    geom = SetupGeometry(((Decimal(0),),), (Decimal("1e-7"),), (Decimal(1), Decimal(1)), Decimal("5e-7"))
    assert len(list(enumerate_paths(geom))) == 1


def test_path_order_first_plane_most_significant():
    ps = paths("sim1")
    assert ps[0].s == (0, 0) and ps[1].s == (0, 1) and ps[5].s == (1, 0)
    assert ps[12].signed_labels((5, 5)) == (0, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=1, max_size=6), st.data())
def test_mixed_radix_round_trip(radices, data):
    n = data.draw(st.integers(0, int(np.prod(radices)) - 1))
    s = decode_path(n, radices)
    assert all(0 <= d < r for d, r in zip(s, radices))
    assert encode_path(s, radices) == n


def test_all_couplings_off_gives_prefactor():
    model = coupling("sim1")
    zero = np.full(model.H.shape, mpc(0), dtype=object)
    off = replace(model, H=zero, c_vec=(mpfr(0),) * 2, d_vec=(mpfr(0),) * 2)
    expected = model.chi0 * model.iterates[0].sqrt_xi * model.iterates[1].sqrt_xi
    assert relative_difference(path_amplitude(off, paths("sim1")[7], 0), expected) < TOL


@pytest.mark.parametrize("name", ["sim1", "sim2"])
def test_path_term_matches_amplitude(name):
    model = coupling(name)
    for p in paths(name)[::7]:
        term = path_term(model, p)
        for k in (0, 37, 173, 500):
            x = to_real(TS) * k
            assert relative_difference(term.value(x), path_amplitude(model, p, x)) < TOL * 1e3


def test_single_path_is_pure_exponential():
    model = coupling("sim1")
    s = screen_intensity(model, [paths("sim1")[3]], range(0, 40), TS)
    logs = [gmpy2.log(v) for v in s.rescaled]
    second = [logs[k + 1] - 2 * logs[k] + logs[k - 1] for k in range(1, 39)]
    assert max(abs(v) for v in second) < TOL * 1e6
    for k, x, r in zip(s.k, s.positions, s.raw):
        assert relative_difference(r, cabs2(path_amplitude(model, paths("sim1")[3], x))) < TOL * 1e3


def test_two_identical_paths_quadruple():
    model = coupling("sim1")
    p = paths("sim1")[12]
    one = screen_intensity(model, [p], range(0, 20), TS)
    two = screen_intensity(model, [p, p], range(0, 20), TS)
    assert max_relative_difference(two.raw, [4 * v for v in one.raw]) < TOL


def test_sweep_matches_direct_sum_and_worker_count():
    model = coupling("sim2")
    terms = [path_term(model, p) for p in paths("sim2")]
    ks = range(0, 200)
    serial = superpose(terms, ks, TS)
    parallel = superpose(terms, ks, TS, workers=2)
    assert serial == parallel
    direct = [gmpy2.fsum([t.value(to_real(TS) * k).real for t in terms]) for k in (0, 63, 64, 65, 199)]
    assert max_relative_difference([serial[k].real for k in (0, 63, 64, 65, 199)], direct) < TOL * 1e6


def test_sweep_rejects_gaps():
    with pytest.raises(ValueError):
        superpose([], [0, 2], TS)


def test_gamma_theta_reproduces_intensity():
    model = coupling("sim1")
    ps = paths("sim1")
    s = screen_intensity(model, ps, range(0, 12), TS)
    for k in (0, 5, 11):
        total = mpc(0)
        total_polar = mpc(0)
        for p in ps:
            gamma, theta = gamma_theta(model, p, k, TS)
            total += gamma * lattice_phase(model, p, k, TS)
            total_polar += abs(gamma) * gmpy2.exp(mpc(0, theta))
        assert relative_difference(cabs2(total), s.rescaled[k]) < TOL * 1e3
        assert relative_difference(cabs2(total_polar), s.rescaled[k]) < TOL * 1e3


def test_gamma_theta_trivial_cases():
    model = coupling("sim1")
    p = paths("sim1")[6]
    _, theta0 = gamma_theta(model, p, 0, TS)
    HI = model.H_I
    quad = gmpy2.fsum([HI[r, c] * p.x[r] * p.x[c] for r in range(2) for c in range(2)])
    assert theta0 == quad
    zero = np.full(model.H.shape, mpc(0), dtype=object)
    off = replace(model, H=zero, c_vec=(mpfr(0),) * 2)
    for k in (0, 3, 99):
        assert gamma_theta(off, p, k, TS)[0] == 1


def test_samples_consistency_and_csv_round_trip():
    model = coupling("sim1")
    s = screen_intensity(model, paths("sim1"), range(0, 30), TS)
    assert s.consistency_error() < TOL * 1e3
    ks, rescaled, rows = read_samples_csv(s.to_csv())
    assert ks == list(range(30))
    assert rescaled == list(s.rescaled)
    assert list(rows[0]) == ["k", "x_meters", "raw", "normalized", "rescaled"]


def test_single_sample_range():
    model = coupling("sim1")
    s = screen_intensity(model, paths("sim1"), range(17, 18), TS)
    assert len(s) == 1 and s.to_csv().count("\n") == 2


def test_envelope_overflow_is_reported():
    model = coupling("sim1")
    with pytest.raises(IntensityRangeError):
        screen_intensity(model, paths("sim1")[:1], range(10 ** 7, 10 ** 7 + 1), TS)
