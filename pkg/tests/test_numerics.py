import random

import gmpy2
import pytest
from gmpy2 import mpc, mpfr
from hypothesis import given, settings, strategies as st

from qpc.numerics import (EmptyInputError, PrecisionPolicy, compensated_complex_sum, direct_dft, fft_normalized,
                          format_real, ifft_normalized, max_relative_difference, policy_from_env, real_sum,
                          relative_difference, to_real)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def test_policy_bits_and_tolerance():
    p = PrecisionPolicy(64)
    assert p.bits == 213
    assert p.tolerance == mpfr("1e-60")
    assert p.escalated().decimal_digits == 128


@pytest.mark.parametrize("digits,factor", [(15, 2), (64, 1)])
def test_policy_rejects_bad_values(digits, factor):
    with pytest.raises(ValueError):
        PrecisionPolicy(digits, factor)


def test_policy_context_is_scoped():
    before = gmpy2.get_context().precision
    with PrecisionPolicy(100).context():
        assert gmpy2.get_context().precision == PrecisionPolicy(100).bits
    assert gmpy2.get_context().precision == before


def test_policy_from_env(monkeypatch):
    monkeypatch.setenv("QPC_PRECISION_DIGITS", "80")
    assert policy_from_env(PrecisionPolicy(64)).decimal_digits == 80
    monkeypatch.delenv("QPC_PRECISION_DIGITS")
    assert policy_from_env(PrecisionPolicy(40)).decimal_digits == 40


def test_decimal_strings_round_once():
    from decimal import Decimal
    assert to_real(Decimal("0.1")) == mpfr("0.1")


def test_ifft_constant_and_impulse():
    assert ifft_normalized([1, 1, 1, 1]) == [2, 0, 0, 0]
    out = ifft_normalized([1, 0, 0, 0])
    assert all(v == mpc("0.5") for v in out)


def test_ifft_empty():
    with pytest.raises(EmptyInputError):
        ifft_normalized([])


@pytest.mark.parametrize("size", [8, 7, 12, 97, 173, 250])
def test_ifft_matches_direct_sum(size):
    rng = random.Random(size)
    x = [mpc(rng.uniform(-1, 1), rng.uniform(-1, 1)) for _ in range(size)]
    fast = ifft_normalized(x)
    slow = direct_dft(x, +1)
    assert max_relative_difference(fast, slow) < PrecisionPolicy(64).tolerance


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=40))
def test_transform_round_trip_and_parseval(values):
    x = [mpc(a, b) for a, b in values]
    y = ifft_normalized(x)
    back = fft_normalized(y)
    tol = PrecisionPolicy(64).tolerance
    assert max_relative_difference(back, x) <= tol
    ex = real_sum(abs(v) ** 2 for v in x)
    ey = real_sum(abs(v) ** 2 for v in y)
    assert relative_difference(ex, ey) <= tol


def test_size_must_match_length():
    assert len(ifft_normalized([1, 2, 3], size=3)) == 3
    with pytest.raises(ValueError):
        ifft_normalized([1, 2, 3], size=2)


def test_compensated_sum_basics():
    assert compensated_complex_sum([]) == 0
    a, b = mpc(mpfr("1e40"), mpfr("-3e39")), mpc(mpfr("1.5"), mpfr("2.25"))
    assert compensated_complex_sum([a, -a, b]) == b


def test_compensated_sum_wide_dynamic_range():
    rng = random.Random(7)
    terms = [mpc(rng.uniform(-1, 1) * 10.0 ** rng.randint(-20, 20),
                 rng.uniform(-1, 1) * 10.0 ** rng.randint(-20, 20)) for _ in range(100_000)]
    got = compensated_complex_sum(terms)
    with PrecisionPolicy(256).context():
        ref = mpc(0)
        for t in terms:
            ref += t
    assert relative_difference(got, ref) <= PrecisionPolicy(64).tolerance


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=0, max_size=60), st.randoms())
def test_compensated_sum_is_order_independent(values, rnd):
    terms = [mpc(a, b) * mpfr(10) ** (i % 9 - 4) for i, (a, b) in enumerate(values)]
    shuffled = list(terms)
    rnd.shuffle(shuffled)
    assert compensated_complex_sum(terms) == compensated_complex_sum(shuffled)


def test_format_real_round_trips():
    x = gmpy2.const_pi() / 3
    assert mpfr(format_real(x, 66)) == x
