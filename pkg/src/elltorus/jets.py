"""Truncated weighted Taylor polynomials whose coefficients are sampled functions.

A :class:`Jet` stores one array per monomial; the arrays broadcast against
each other, so a quantity that depends on one angle can be kept on a 1-D grid
and combined freely with quantities on a 2-D grid.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


class JetSpace:
    """Monomials in ``nv`` variables with weighted degree ``<= max_weight``.

    Parameters
    ----------
    weights : sequence of int
        Positive weight of each variable.
    max_weight : int
        Truncation on the weighted degree.
    group : sequence of bool, optional
        Variables whose plain total degree is capped by ``max_group``.
    max_group : int, optional
    """

    def __init__(self, weights, max_weight, group=None, max_group=None):
        self.weights = tuple(int(w) for w in weights)
        self.nv = len(self.weights)
        self.max_weight = int(max_weight)
        group = tuple(bool(g) for g in (group or (False,) * self.nv))
        self.group = group
        self.max_group = max_group
        monos = []
        for e in itertools.product(*(range(self.max_weight // w + 1) for w in self.weights)):
            if self.admits(e):
                monos.append(e)
        monos.sort(key=lambda e: (self.weight(e), e))
        self.monomials = monos
        self.index = {e: i for i, e in enumerate(monos)}
        self.size = len(monos)
        self._table = []
        for ia, a in enumerate(monos):
            bs, cs = [], []
            for ib, b in enumerate(monos):
                c = tuple(x + y for x, y in zip(a, b))
                ic = self.index.get(c)
                if ic is not None:
                    bs.append(ib)
                    cs.append(ic)
            self._table.append((np.array(bs, dtype=np.int64), np.array(cs, dtype=np.int64)))

    def weight(self, e) -> int:
        return sum(w * x for w, x in zip(self.weights, e))

    def admits(self, e) -> bool:
        if self.weight(e) > self.max_weight:
            return False
        if self.max_group is not None:
            if sum(x for x, g in zip(e, self.group) if g) > self.max_group:
                return False
        return True


class Jet:
    """Element of a :class:`JetSpace` with array-valued coefficients."""

    __slots__ = ("space", "c")

    def __init__(self, space: JetSpace, coeffs: list):
        self.space = space
        self.c = coeffs  # list of arrays (or None for zero)

    @classmethod
    def constant(cls, space, value):
        c = [None] * space.size
        c[0] = np.asarray(value, dtype=float)
        return cls(space, c)

    @classmethod
    def variable(cls, space, i, value=0.0):
        e = [0] * space.nv
        e[i] = 1
        c = [None] * space.size
        c[0] = np.asarray(value, dtype=float)
        # a variable whose degree-one monomial is truncated away is just its value
        if tuple(e) in space.index:
            c[space.index[tuple(e)]] = np.asarray(1.0)
        return cls(space, c)

    @property
    def const(self):
        return self.c[0] if self.c[0] is not None else np.asarray(0.0)

    def nilpotent(self) -> "Jet":
        c = list(self.c)
        c[0] = None
        return Jet(self.space, c)

    def __add__(self, other):
        if not isinstance(other, Jet):
            other = Jet.constant(self.space, other)
        return Jet(self.space, [_add(a, b) for a, b in zip(self.c, other.c)])

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, [None if a is None else -a for a in self.c])

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            v = np.asarray(other)
            return Jet(self.space, [None if a is None else a * v for a in self.c])
        out = [None] * self.space.size
        for ia, a in enumerate(self.c):
            if a is None:
                continue
            bs, cs = self.space._table[ia]
            for ib, ic in zip(bs, cs):
                b = other.c[ib]
                if b is None:
                    continue
                out[ic] = _add(out[ic], a * b)
        return Jet(self.space, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.power(-1.0)
        return self * (1.0 / np.asarray(other))

    def power(self, p: float) -> "Jet":
        """``self ** p`` expanded around the constant part (which must be nonzero)."""
        c0 = self.const
        d = self.nilpotent()
        out = Jet.constant(self.space, c0 ** p)
        term = None
        for n in range(1, self.space.max_weight + 1):
            term = d if term is None else term * d
            if all(a is None for a in term.c):
                break
            out = out + term * (binom(p, n) * c0 ** (p - n))
        return out

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def sin_cos_shift(self, angle):
        """Return ``(sin(angle + self), cos(angle + self))`` for a nilpotent ``self``."""
        d = self.nilpotent()
        s, c = _sin_cos_nilpotent(d)
        sa, ca = np.sin(angle), np.cos(angle)
        return s * ca + c * sa, c * ca - s * sa

    def coefficient(self, mono):
        i = self.space.index[tuple(mono)]
        return self.c[i]

    def items(self):
        for e, a in zip(self.space.monomials, self.c):
            if a is not None:
                yield e, a


def binom(p: float, n: int) -> float:
    """Generalized binomial coefficient ``p (p - 1) ... (p - n + 1) / n!``."""
    out = 1.0
    for i in range(n):
        out *= (p - i) / (i + 1)
    return out


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _sin_cos_nilpotent(d: Jet):
    space = d.space
    sin = Jet.constant(space, 0.0)
    cos = Jet.constant(space, 1.0)
    term = None
    for n in range(1, space.max_weight + 1):
        term = d if term is None else term * d
        if all(a is None for a in term.c):
            break
        f = 1.0 / math.factorial(n)
        # sin: n = 1, 3, 5 ... with signs + - +; cos: n = 2, 4 ... with - +
        if n % 2:
            sin = sin + term * (f * (-1) ** ((n - 1) // 2))
        else:
            cos = cos + term * (f * (-1) ** (n // 2))
    return sin, cos
