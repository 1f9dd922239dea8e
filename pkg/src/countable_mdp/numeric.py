"""Exact rationals, their text forms, and certified interval enclosures.

Interval work goes through mpmath's interval context.  Endpoints are pulled
back out as exact Fractions so every comparison made by callers is exact.
"""
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction

from mpmath import iv
from mpmath.libmp import to_rational

from .errors import ValidationError

DEFAULT_BITS = 256


def parse_rational(text):
    """Parse '7/10', '0.7', '3' (or pass numbers through) into a Fraction."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"not a rational number: {text!r}", value=str(text)) from exc


def fmt_rational(q):
    q = Fraction(q)
    return f"{q.numerator}/{q.denominator}"


def fmt_decimal(q, digits=12):
    return f"{float(q):.{digits}g}"


@contextmanager
def working_precision(bits=DEFAULT_BITS):
    old = iv.prec
    iv.prec = bits
    try:
        yield
    finally:
        iv.prec = old


def to_iv(x):
    """Rigorous interval enclosing x (Fraction, int, Enclosure or interval)."""
    if isinstance(x, Enclosure):
        return iv.mpf([to_iv(x.lo).a, to_iv(x.hi).b])
    if isinstance(x, int):
        return iv.mpf(x)
    if isinstance(x, Fraction):
        return iv.mpf(x.numerator) / iv.mpf(x.denominator)
    return x


def iv_bounds(x):
    lo, hi = x._mpi_
    return Fraction(*to_rational(lo)), Fraction(*to_rational(hi))


@dataclass(frozen=True)
class Enclosure:
    """Closed interval [lo, hi] with exact rational endpoints."""
    lo: Fraction
    hi: Fraction

    @classmethod
    def exact(cls, q):
        q = Fraction(q)
        return cls(q, q)

    @classmethod
    def of(cls, x):
        if isinstance(x, Enclosure):
            return x
        if isinstance(x, (int, Fraction)):
            return cls.exact(x)
        lo, hi = iv_bounds(x)
        return cls(lo, hi)

    @property
    def is_exact(self):
        return self.lo == self.hi

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        return (self.lo + self.hi) / 2

    def value(self):
        """The exact rational if the enclosure is a point."""
        if not self.is_exact:
            raise ValueError("enclosure is not a single rational")
        return self.lo

    def certainly_le(self, other):
        return self.hi <= Enclosure.of(other).lo

    def certainly_lt(self, other):
        return self.hi < Enclosure.of(other).lo

    def text(self):
        if self.is_exact:
            return fmt_rational(self.lo)
        return f"[{fmt_decimal(self.lo, 15)}, {fmt_decimal(self.hi, 15)}]"

    def __float__(self):
        return float(self.mid)


def certified(x):
    """Fractions stay exact; anything else becomes an Enclosure."""
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return Enclosure.of(x)


def lower(x):
    return x.lo if isinstance(x, Enclosure) else Fraction(x)


def upper(x):
    return x.hi if isinstance(x, Enclosure) else Fraction(x)


def text(x):
    if isinstance(x, Enclosure):
        return x.text()
    return fmt_rational(x)
