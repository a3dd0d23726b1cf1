"""Configurable-precision arithmetic on top of MPFR/MPC, plus the normalized DFT pair.

Every amplitude computation in the package runs inside ``policy.context()``,
which sets the working precision of gmpy2.  Values are plain ``gmpy2.mpfr`` /
``gmpy2.mpc`` objects; they are immutable and carry their own precision.
"""
from __future__ import annotations

import math
import os
from contextlib import contextmanager
from dataclasses import dataclass
from decimal import Decimal
from functools import lru_cache
from typing import Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

DEFAULT_DIGITS = 64
PRECISION_ENV = "QPC_PRECISION_DIGITS"

_LOG2_10 = math.log2(10.0)


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class PrecisionPolicy:
    decimal_digits: int = DEFAULT_DIGITS
    escalation_factor: int = 2

    def __post_init__(self):
        if int(self.decimal_digits) != self.decimal_digits or self.decimal_digits < 16:
            raise ValueError(f"decimal_digits must be an integer >= 16, got {self.decimal_digits}")
        if int(self.escalation_factor) != self.escalation_factor or self.escalation_factor < 2:
            raise ValueError(f"escalation_factor must be an integer >= 2, got {self.escalation_factor}")

    @property
    def bits(self) -> int:
        return int(math.ceil(self.decimal_digits * _LOG2_10))

    @property
    def tolerance(self) -> mpfr:
        """Relative agreement expected of two independent evaluations."""
        with self.context():
            return mpfr(10) ** (4 - self.decimal_digits)

    def escalated(self) -> "PrecisionPolicy":
        return PrecisionPolicy(self.decimal_digits * self.escalation_factor, self.escalation_factor)

    @contextmanager
    def context(self):
        ctx = gmpy2.context(gmpy2.get_context(), precision=self.bits, real_prec=self.bits, imag_prec=self.bits)
        with ctx:
            yield ctx


def policy_from_env(default: PrecisionPolicy | None = None) -> PrecisionPolicy:
    """Honour QPC_PRECISION_DIGITS when set, otherwise return ``default``."""
    base = default or PrecisionPolicy()
    raw = os.environ.get(PRECISION_ENV)
    if not raw:
        return base
    return PrecisionPolicy(int(raw), base.escalation_factor)


def to_real(value) -> mpfr:
    """Exact decimal strings and Decimals round once; floats are taken as their binary value."""
    if isinstance(value, Decimal):
        return mpfr(str(value))
    if isinstance(value, (mpc,)):
        raise TypeError("complex value where a real was expected")
    return mpfr(value)


def to_complex(re, im=0) -> mpc:
    return mpc(to_real(re), to_real(im))


def cabs2(z) -> mpfr:
    return z.real * z.real + z.imag * z.imag


def relative_difference(a, b) -> mpfr:
    """|a - b| / max(|a|, |b|), zero when both vanish."""
    scale = max(abs(a), abs(b))
    if scale == 0:
        return mpfr(0)
    return abs(a - b) / scale


def max_relative_difference(xs: Sequence, ys: Sequence) -> mpfr:
    """Largest entrywise difference scaled by the largest magnitude of either sequence."""
    if len(xs) != len(ys):
        raise ValueError("length mismatch")
    scale = max([abs(v) for v in xs] + [abs(v) for v in ys] + [mpfr(0)])
    if scale == 0:
        return mpfr(0)
    return max(abs(x - y) for x, y in zip(xs, ys)) / scale


def compensated_complex_sum(terms: Iterable) -> mpc:
    """Correctly rounded sum of complex terms.

    Real and imaginary parts are summed separately with MPFR's exact
    summation, so the result is the exact sum rounded once at the working
    precision and does not depend on the order of ``terms``.
    """
    re = []
    im = []
    for t in terms:
        if isinstance(t, mpc) or isinstance(t, complex):
            re.append(mpfr(t.real))
            im.append(mpfr(t.imag))
        else:
            re.append(mpfr(t))
    if not re:
        return mpc(0)
    return mpc(gmpy2.fsum(re), gmpy2.fsum(im) if im else mpfr(0))


def real_sum(terms: Iterable) -> mpfr:
    return gmpy2.fsum([mpfr(t) for t in terms])


@lru_cache(maxsize=64)
def _unit_roots(size: int, bits: int) -> tuple:
    # exp(+2 pi i j / size) for j in [0, size)
    with gmpy2.context(gmpy2.get_context(), precision=bits + 16):
        two_pi = 2 * gmpy2.const_pi()
        raw = [gmpy2.sin_cos(two_pi * j / size) for j in range(size)]
    exact = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}
    with gmpy2.context(gmpy2.get_context(), precision=bits, real_prec=bits, imag_prec=bits):
        # quarter turns are exact so constant and impulse inputs transform without residue
        return tuple(mpc(*exact[4 * j // size]) if (4 * j) % size == 0 else mpc(c, s)
                     for j, (s, c) in enumerate(raw))


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _dft(x: np.ndarray, roots: np.ndarray, stride: int, sign: int) -> np.ndarray:
    """Unscaled mixed-radix transform; ``roots[j*stride]`` is the unit root of this length."""
    n = len(x)
    if n == 1:
        return x.copy()
    full = len(roots)
    table = roots if sign > 0 else np.array([w.conjugate() for w in roots], dtype=object)
    radix = _smallest_factor(n)
    p = np.arange(n)
    if radix == n:
        # prime length: direct summation
        W = table[(np.outer(p, p) * stride) % full]
        return W.dot(x)
    sub = n // radix
    out = None
    for r in range(radix):
        part = _dft(x[r::radix], roots, stride * radix, sign)
        term = table[(r * p * stride) % full] * part[p % sub]
        out = term if out is None else out + term
    return out


def _transform(samples: Sequence, size: int | None, sign: int) -> list:
    m = len(samples) if size is None else size
    if m == 0:
        raise EmptyInputError("transform of an empty sequence")
    if len(samples) != m:
        raise ValueError(f"expected {m} samples, got {len(samples)}")
    bits = gmpy2.get_context().precision
    roots = np.array(_unit_roots(m, bits), dtype=object)
    x = np.array([mpc(s) for s in samples], dtype=object)
    scale = gmpy2.rec_sqrt(mpfr(m))
    return [v * scale for v in _dft(x, roots, 1, sign)]


def ifft_normalized(samples: Sequence, size: int | None = None) -> list:
    """out[p] = M^{-1/2} sum_k samples[k] exp(+2 pi i k p / M)."""
    return _transform(samples, size, +1)


def fft_normalized(samples: Sequence, size: int | None = None) -> list:
    """Inverse of :func:`ifft_normalized` (conjugate kernel, same scaling)."""
    return _transform(samples, size, -1)


def direct_dft(samples: Sequence, sign: int = +1) -> list:
    """O(M^2) reference transform with the same normalization."""
    m = len(samples)
    if m == 0:
        raise EmptyInputError("transform of an empty sequence")
    two_pi = 2 * gmpy2.const_pi()
    out = []
    for p in range(m):
        acc = []
        for k in range(m):
            s, c = gmpy2.sin_cos(two_pi * ((k * p) % m) / m)
            acc.append(mpc(samples[k]) * mpc(c, sign * s))
        out.append(compensated_complex_sum(acc) / gmpy2.sqrt(mpfr(m)))
    return out


def format_real(x, digits: int) -> str:
    """Decimal string carrying ``digits`` significant digits (enough to round-trip)."""
    x = mpfr(x)
    if x == 0:
        return "0"
    return _sci(x, digits)


def _sci(x: mpfr, digits: int) -> str:
    mant, exp, _ = gmpy2.digits(x, 10, digits)
    sign = ""
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    mant = mant.rstrip("0") or "0"
    head, tail = mant[0], mant[1:]
    e = exp - 1
    body = head + ("." + tail if tail else "")
    return f"{sign}{body}e{e:+d}"
