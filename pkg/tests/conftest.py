from functools import lru_cache
from pathlib import Path

import gmpy2
import pytest

from qpc.config import parse_config_text
from qpc.intensity import enumerate_paths
from qpc.numerics import PrecisionPolicy
from qpc.propagator import coupling_for

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
DIGITS = 64


@pytest.fixture(scope="session", autouse=True)
def working_precision():
    """Every test runs at 64 digits unless it opens its own context."""
    saved = gmpy2.get_context()
    ctx = gmpy2.context(saved, precision=PrecisionPolicy(DIGITS).bits)
    ctx.real_prec = ctx.imag_prec = ctx.precision
    gmpy2.set_context(ctx)
    yield
    gmpy2.set_context(saved)


@lru_cache(maxsize=None)
def load(name: str):
    return parse_config_text((CONFIGS / f"{name}.toml").read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def coupling(name: str, digits: int = DIGITS):
    consts, geom, _ = load(name)
    with PrecisionPolicy(digits).context():
        return coupling_for(geom, consts)


@lru_cache(maxsize=None)
def paths(name: str, digits: int = DIGITS):
    with PrecisionPolicy(digits).context():
        return tuple(enumerate_paths(load(name)[1]))


def random_geometry(rng, slit_planes: int):
    """Electron-scale geometry with 1-3 well separated slits per plane."""
    from decimal import Decimal

    from qpc.config import SetupGeometry

    def dec(v):
        return Decimal(f"{v:.6e}")

    betas, centers = [], []
    for j in range(slit_planes):
        beta = rng.uniform(120e-9, 300e-9) if j == 0 else rng.uniform(40e-9, 100e-9)
        x, plane = rng.uniform(-3 * beta, 3 * beta), []
        for _ in range(rng.randint(1, 3)):
            plane.append(dec(x))
            x += rng.uniform(6, 20) * beta
        betas.append(dec(beta))
        centers.append(tuple(plane))
    inner = [dec(rng.uniform(200e-6, 600e-6)) for _ in range(slit_planes - 1)]
    distances = (dec(rng.uniform(0.5, 1.5)), *inner, dec(rng.uniform(0.5, 1.5)))
    return SetupGeometry(tuple(centers), tuple(betas), distances, dec(rng.uniform(300e-9, 700e-9)))


def oracle_discrepancy(geom, consts, rng, points=5, spec=None):
    """Largest closed-form vs quadrature relative difference on one resolvable path.

    The path is drawn among those whose peak amplitude is within 1e-6 of the
    strongest one; the points span +-1.5 envelope widths around its centre.
    """
    from gmpy2 import mpc, sqrt

    from qpc.intensity import path_amplitude
    from qpc.numerics import relative_difference
    from qpc.oracle import QuadratureSpec, quadrature_amplitudes

    spec = spec or QuadratureSpec()
    c = coupling_for(geom, consts)
    paths_ = list(enumerate_paths(geom))
    width = 1 / sqrt(-2 * c.A_last)
    centers = [-gmpy2.fsum([a * b for a, b in zip(c.c_vec, p.x)]) / (2 * c.A_last) for p in paths_]
    peaks = [abs(path_amplitude(c, p, x)) for p, x in zip(paths_, centers)]
    eligible = [n for n, a in enumerate(peaks) if a >= max(peaks) * gmpy2.mpfr("1e-6")]
    n = rng.choice(eligible)
    xs = [centers[n] + width * (-1.5 + 3 * i / (points - 1)) for i in range(points)]
    quad = quadrature_amplitudes(geom, consts, paths_[n].s, [float(x) for x in xs], spec)
    return max(float(relative_difference(path_amplitude(c, paths_[n], x), mpc(q.value))) for x, q in zip(xs, quad))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
