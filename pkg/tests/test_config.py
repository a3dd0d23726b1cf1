from dataclasses import replace
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from qpc.config import (ConfigParseError, ConfigValidationError, ExperimentConfig, PhysicalConstants,
                        SetupGeometry, derive_schedule, dumps_config, load_config, loads_config,
                        parse_config_text, parse_quantity, validate_setup)
from qpc.numerics import PrecisionPolicy, relative_difference, to_real

from conftest import CONFIGS, load

CONSTS = PhysicalConstants(Decimal("9.11e-31"), Decimal("1.05e-34"), Decimal("1.46e7"))


def geometry(centers, betas, distances, alpha="1"):
    return SetupGeometry(tuple(tuple(Decimal(str(c)) for c in p) for p in centers),
                         tuple(Decimal(str(b)) for b in betas), tuple(Decimal(str(d)) for d in distances),
                         Decimal("5e-7"), Decimal(alpha))


def test_sim1_printed_loads():
    consts, geom, exp = load_config(CONFIGS / "sim1_printed.toml")
    assert geom.n_planes == 3
    assert geom.slits_per_plane == (5, 5)
    assert geom.slit_half_widths == (Decimal("1.965E-7"), Decimal("6.32E-8"))
    assert exp.sampling_interval == Decimal("1e-6")


def test_sim2_printed_loads():
    _, geom, _ = load_config(CONFIGS / "sim2_printed.toml")
    assert geom.n_planes == 5
    assert geom.slits_per_plane == (3, 3, 3, 3)
    assert geom.plane_distances == tuple(Decimal(v) for v in ("1", "476.2e-6", "222.2e-6", "175.4e-6", "1"))


@pytest.mark.parametrize("text,kind,expected", [
    ("196.5 nm", "length", "1.965e-7"),
    ("1 um", "length", "1e-6"),
    ("1 μm", "length", "1e-6"),
    ("400e-6 m", "length", "4e-4"),
    ("9.11e-31 kg", "mass", "9.11e-31"),
    ("1.05e-34 J*s", "action", "1.05e-34"),
    ("14600 km/s", "velocity", "1.46e7"),
])
def test_parse_quantity(text, kind, expected):
    assert parse_quantity(text, kind) == Decimal(expected)


@pytest.mark.parametrize("text", ["196.5", "196.5 furlong", "abc nm", 196.5])
def test_parse_quantity_rejects(text):
    with pytest.raises(ConfigParseError):
        parse_quantity(text, "length")


def test_overlapping_slits_report_separation():
    text = (CONFIGS / "sim1_printed.toml").read_text().replace('"-2960.6 nm"', '"-5700.0 nm"')
    with pytest.raises(ConfigValidationError) as info:
        loads_config(text)
    bad = [v for v in info.value.violations if v.constraint == "separation"]
    assert bad and bad[0].plane == 1 and bad[0].slit == 1


def test_gap_of_exactly_two_beta_is_rejected():
    geom = geometry([[0, 2e-7]], [1e-7], [1, 1])
    assert [v.constraint for v in validate_setup(CONSTS, geom).errors] == ["separation"]


def test_every_violation_is_listed():
    geom = geometry([[0, 1e-7], [3e-7, 2e-7]], [1e-7, -1e-7], [1, 0, 1], alpha="0.5")
    names = {v.constraint for v in validate_setup(CONSTS, geom).errors}
    assert {"separation-factor", "positive-distance", "positive-half-width"} <= names


def test_overlap_lint_is_a_warning_unless_strict():
    geom = geometry([[0, 8e-7]], [2e-7], [1, 1])
    exp = ExperimentConfig(Decimal("1e-6"))
    rep = validate_setup(CONSTS, geom, exp)
    assert rep.ok and [v.constraint for v in rep.warnings] == ["overlap"]
    strict = validate_setup(CONSTS, geom, replace(exp, strict_overlap=True))
    assert [v.constraint for v in strict.errors] == ["overlap"]


def test_missing_section_is_a_parse_error():
    with pytest.raises(ConfigParseError):
        parse_config_text("[constants]\nmass = \"1 kg\"\n")


def test_derive_schedule_values():
    _, geom, _ = load("sim1_printed")
    t = derive_schedule(geom, CONSTS).durations
    expected = ["6.84931506849315068493150684931506849315068493150684931506849315e-8",
                "2.73972602739726027397260273972602739726027397260273972602739726e-11"]
    tol = PrecisionPolicy(64).tolerance
    assert relative_difference(t[0], to_real(expected[0])) < tol
    assert relative_difference(t[1], to_real(expected[1])) < tol
    assert t[2] == t[0]
    with PrecisionPolicy(128).context():
        hi = derive_schedule(geom, CONSTS).durations
    assert all(relative_difference(a, b) < tol for a, b in zip(t, hi))


def test_schedule_scaling():
    geom = geometry([[0]], [1e-7], [0.5, 0.5])
    t = derive_schedule(geom, CONSTS)
    assert t.durations[0] == t.durations[1]
    assert t.cumulative[1] > t.cumulative[0]
    fast = derive_schedule(geom, replace(CONSTS, v_z=CONSTS.v_z * 2))
    assert all(f * 2 == s for f, s in zip(fast.durations, t.durations))


@pytest.mark.parametrize("name", ["sim1_printed", "sim2_printed", "sim1", "sim2"])
def test_dump_round_trip(name):
    consts, geom, exp = load(name)
    again = loads_config(dumps_config(consts, geom, exp))
    assert again == (consts, geom, exp)


gap_units = st.lists(st.sampled_from(["0.5", "1.9", "2", "2.1", "3", "40"]), min_size=0, max_size=4)


@settings(max_examples=80, deadline=None)
@given(st.lists(gap_units, min_size=1, max_size=3), st.sampled_from(["1", "1.5"]),
       st.lists(st.sampled_from(["1", "0", "-1e-3", "4e-4"]), min_size=4, max_size=4))
def test_acceptance_iff_constraints_hold(gaps_per_plane, alpha, dist_pool):
    beta = Decimal("1e-7")
    centers = []
    for gaps in gaps_per_plane:
        xs = [Decimal(0)]
        for g in gaps:
            xs.append(xs[-1] + Decimal(g) * beta)
        centers.append(tuple(xs))
    distances = tuple(Decimal(d) for d in dist_pool[: len(centers) + 1])
    geom = SetupGeometry(tuple(centers), (beta,) * len(centers), distances, Decimal("5e-7"), Decimal(alpha))
    expected = (all(Decimal(g) > 2 * Decimal(alpha) for gaps in gaps_per_plane for g in gaps)
                and all(d > 0 for d in distances))
    exp = ExperimentConfig(Decimal("1e-6"))
    assert validate_setup(CONSTS, geom, exp).ok == expected
    if expected:
        assert loads_config(dumps_config(CONSTS, geom, exp))[1] == geom
    else:
        with pytest.raises(ConfigValidationError):
            loads_config(dumps_config(CONSTS, geom, exp))


@settings(max_examples=60, deadline=None)
@given(st.decimals(min_value=Decimal("1e-3"), max_value=Decimal("1e4"), places=6, allow_nan=False),
       st.sampled_from(["m", "cm", "mm", "um", "nm", "pm"]))
def test_unit_round_trip(value, unit):
    si = parse_quantity(f"{value} {unit}", "length")
    from qpc.config import format_quantity
    assert parse_quantity(format_quantity(si, "length"), "length") == si
