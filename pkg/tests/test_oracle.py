import math
import random
from dataclasses import replace
from decimal import Decimal

import numpy as np
import pytest
from gmpy2 import mpc

from qpc.config import SetupGeometry, validate_setup
from qpc.intensity import enumerate_paths, path_amplitude
from qpc.numerics import relative_difference
from qpc.oracle import (OracleError, QuadratureSpec, integrate_1d, nodes_weights, quadrature_amplitude,
                        quadrature_amplitudes)
from qpc.propagator import coupling_for

from conftest import coupling, load, oracle_discrepancy, random_geometry


@pytest.mark.parametrize("rule", ["gauss-legendre", "trapezoid"])
def test_gaussian_integral(rule):
    res = integrate_1d(lambda x: np.exp(-x * x) + 0j, -8, 8, QuadratureSpec(rule=rule, rel_tol=1e-12))
    assert abs(res.value - math.sqrt(math.pi)) < 1e-12


def test_nodes_integrate_polynomials_exactly():
    x, w = nodes_weights(-1, 3, 64, "gauss-legendre")
    assert abs(np.sum(w * x ** 5) - (3 ** 6 - 1) / 6) < 1e-10


def test_single_slit_on_axis():
    consts = load("sim1")[0]
    geom = SetupGeometry(((Decimal(0),),), (Decimal("2e-7"),), (Decimal(1), Decimal(1)), Decimal("5e-7"))
    c = coupling_for(geom, consts)
    (path,) = enumerate_paths(geom)
    for x in (0.0, 3e-6, -1e-5):
        q = quadrature_amplitude(geom, consts, path.s, x)
        assert q.converged
        assert relative_difference(path_amplitude(c, path, x), mpc(q.value)) < 1e-8


def test_translation_covariance():
    consts, geom, _ = load("sim1")
    shift = Decimal("2.5e-6")
    moved = replace(geom, slit_centers=tuple(tuple(x + shift for x in p) for p in geom.slit_centers))
    spec = QuadratureSpec(rel_tol=1e-10)
    xs = [-3e-6, 0.0, 4e-6]
    base = quadrature_amplitudes(geom, consts, (2, 2), xs, spec)
    shifted = quadrature_amplitudes(moved, consts, (2, 2), [x + float(shift) for x in xs],
                                    replace(spec, source_center=float(shift)))
    for a, b in zip(base, shifted):
        assert abs(a.value - b.value) <= 1e-8 * abs(a.value)


def test_sim1_central_trajectory():
    consts, geom, _ = load("sim1")
    c = coupling("sim1")
    path = next(p for p in enumerate_paths(geom) if p.s == (2, 2))
    xs = np.linspace(-2e-5, 2e-5, 5)
    for x, q in zip(xs, quadrature_amplitudes(geom, consts, path.s, list(xs))):
        assert relative_difference(path_amplitude(c, path, float(x)), mpc(q.value)) < 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_random_geometries(seed):
    rng = random.Random(seed)
    consts = load("sim1")[0]
    geom = random_geometry(rng, rng.randint(1, 2))
    assert validate_setup(consts, geom).ok
    assert oracle_discrepancy(geom, consts, rng) < 1e-6


def test_plane_limit():
    consts, geom, _ = load("sim1")
    deep = replace(geom, slit_centers=geom.slit_centers * 2, slit_half_widths=geom.slit_half_widths * 2,
                   plane_distances=geom.plane_distances[:2] * 2 + geom.plane_distances[-1:])
    with pytest.raises(OracleError):
        quadrature_amplitudes(deep, consts, (0, 0, 0, 0), [0.0])


def test_rect_window_differs_from_gaussian():
    consts, geom, _ = load("sim1")
    g = quadrature_amplitude(geom, consts, (2, 2), 0.0, QuadratureSpec(rel_tol=1e-8))
    r = quadrature_amplitude(geom, consts, (2, 2), 0.0, QuadratureSpec(rel_tol=1e-8, window="rect"))
    assert abs(r.value - g.value) > 1e-3 * abs(g.value)
