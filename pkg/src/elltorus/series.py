"""Truncated Poisson series in actions, secular Cartesian pairs and fast angles.

A series is a finite sum of terms

    c * p^dp * x^dx * y^dy * trig(k . q)

with ``trig`` either ``cos`` or ``sin``.  Internally every polynomial monomial
owns a complex coefficient array ``c`` indexed by the canonical half set of
harmonics ``|k| <= max_trig`` (first non-zero entry of ``k`` positive), and the
monomial's Fourier part is ``Re sum_k c_k exp(i k.q)``.  So ``Re c_k`` is the
cosine coefficient and ``-Im c_k`` the sine coefficient.

Products are computed exactly by a de-aliased pseudo-spectral evaluation: both
factors are sampled on a uniform angle grid with ``N > T_f + T_g + T_out``
points per angle, multiplied pointwise and transformed back.
"""
from __future__ import annotations

import functools
import io
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import scipy.fft as sfft

DROP_THRESHOLD = 1e-30
# relative size of pseudo-spectral round-off that is discarded after each product
ROUNDOFF = 4e-16


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Dimensions:
    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 0:
            raise ValueError(f"invalid dimensions n1={self.n1}, n2={self.n2}")

    @property
    def nvars(self) -> int:
        return self.n1 + 2 * self.n2

    def p_index(self, j: int) -> int:
        return j

    def x_index(self, l: int) -> int:
        return self.n1 + l

    def y_index(self, l: int) -> int:
        return self.n1 + self.n2 + l


@dataclass(frozen=True)
class TruncationLimits:
    max_j1: int
    max_l: int
    max_trig: int

    def __post_init__(self):
        if min(self.max_j1, self.max_l, self.max_trig) < 0:
            raise ValueError("truncation limits must be non-negative")

    def admits(self, j1: int, j2: int) -> bool:
        return j1 <= self.max_j1 and 2 * j1 + j2 <= self.max_l

    def tighter(self, other: "TruncationLimits") -> "TruncationLimits":
        return TruncationLimits(min(self.max_j1, other.max_j1),
                                min(self.max_l, other.max_l),
                                min(self.max_trig, other.max_trig))


class TermKey(NamedTuple):
    dp: tuple
    dxy: tuple
    k: tuple
    parity: str  # "c" or "s"


@dataclass(frozen=True)
class ClassTag:
    j1: int
    j2: int
    s: int


@dataclass
class PhasePoint:
    p: np.ndarray
    q: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("p", "q", "x", "y"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.x, self.y])

    @classmethod
    def from_vector(cls, v, dims: Dimensions) -> "PhasePoint":
        n1, n2 = dims.n1, dims.n2
        v = np.asarray(v, dtype=float)
        return cls(v[:n1], v[n1:2 * n1], v[2 * n1:2 * n1 + n2], v[2 * n1 + n2:])

    @classmethod
    def origin(cls, dims: Dimensions) -> "PhasePoint":
        return cls(np.zeros(dims.n1), np.zeros(dims.n1), np.zeros(dims.n2), np.zeros(dims.n2))


# ---------------------------------------------------------------------------
# harmonic index sets and grids

class HarmonicSet:
    """Canonical half set of integer vectors with ``|k|_1 <= T``.

    Sorted by ``|k|`` then lexicographically (descending), so the set for a
    smaller ``T`` is always a prefix of the set for a larger one.
    """

    def __init__(self, n1: int, T: int):
        self.n1, self.T = n1, T
        ks = []
        rng = range(-T, T + 1)
        for k in itertools.product(rng, repeat=n1):
            if sum(abs(v) for v in k) > T:
                continue
            if _canonical_sign(k) < 0:
                continue
            ks.append(k)
        ks.sort(key=lambda k: (sum(abs(v) for v in k), tuple(-v for v in k)))
        self.k = np.array(ks, dtype=np.int64).reshape(len(ks), n1)
        self.norm = np.abs(self.k).sum(axis=1)
        self.index = {k: i for i, k in enumerate(ks)}
        self.size = len(ks)

    def count(self, T: int) -> int:
        return int(np.searchsorted(self.norm, T, side="right"))


def _canonical_sign(k) -> int:
    for v in k:
        if v:
            return 1 if v > 0 else -1
    return 0


@functools.lru_cache(maxsize=None)
def harmonic_set(n1: int, T: int) -> HarmonicSet:
    return HarmonicSet(n1, T)


class _Grid:
    """Scatter/gather maps between a half-set coefficient array and an rfft spectrum."""

    def __init__(self, n1: int, T: int, N: int):
        hs = harmonic_set(n1, T)
        self.n1, self.T, self.N = n1, T, N
        self.shape = (N,) * n1
        self.rshape = (N,) * (n1 - 1) + (N // 2 + 1,)
        k = hs.k
        last = k[:, -1]
        self.zero = np.all(k == 0, axis=1)
        pos = last > 0
        neg = last < 0
        mid = (last == 0) & ~self.zero
        self._sel_pos = np.nonzero(pos)[0]
        self._sel_neg = np.nonzero(neg)[0]
        self._sel_mid = np.nonzero(mid)[0]
        self._sel_zero = np.nonzero(self.zero)[0]
        self._t_pos = self._flat(k[pos])
        self._t_neg = self._flat(-k[neg])
        self._t_mid_a = self._flat(k[mid])
        self._t_mid_b = self._flat(-k[mid])
        self._t_zero = self._flat(k[self.zero])
        self.scale = float(N) ** n1

    def _flat(self, ks):
        idx = np.mod(ks, self.N)
        return np.ravel_multi_index(tuple(idx.T), self.rshape) if len(ks) else np.zeros(0, dtype=np.int64)

    def to_values(self, c: np.ndarray) -> np.ndarray:
        spec = np.zeros(int(np.prod(self.rshape)), dtype=complex)
        spec[self._t_pos] = 0.5 * c[self._sel_pos]
        spec[self._t_neg] = 0.5 * np.conj(c[self._sel_neg])
        spec[self._t_mid_a] = 0.5 * c[self._sel_mid]
        spec[self._t_mid_b] = 0.5 * np.conj(c[self._sel_mid])
        spec[self._t_zero] = c[self._sel_zero].real
        return sfft.irfftn(spec.reshape(self.rshape), s=self.shape) * self.scale

    def from_values(self, v: np.ndarray) -> np.ndarray:
        spec = (sfft.rfftn(v) / self.scale).ravel()
        c = np.empty(harmonic_set(self.n1, self.T).size, dtype=complex)
        c[self._sel_pos] = 2.0 * spec[self._t_pos]
        c[self._sel_neg] = 2.0 * np.conj(spec[self._t_neg])
        c[self._sel_mid] = 2.0 * spec[self._t_mid_a]
        c[self._sel_zero] = spec[self._t_zero].real
        return c


@functools.lru_cache(maxsize=64)
def _grid(n1: int, T: int, N: int) -> _Grid:
    return _Grid(n1, T, N)


def _grid_size(T_f: int, T_g: int, T_out: int) -> int:
    # exact for |k| <= T_out, and every input harmonic keeps its own slot
    need = max(T_f + T_g + T_out + 1, 2 * max(T_f, T_g) + 1, 2)
    return sfft.next_fast_len(need, real=True)


# ---------------------------------------------------------------------------

def _mono_degrees(m: tuple, n1: int) -> tuple[int, int]:
    return sum(m[:n1]), sum(m[n1:])


class PoissonSeries:
    """Immutable truncated Poisson series (see module docstring)."""

    __slots__ = ("dims", "limits", "_data")

    def __init__(self, dims: Dimensions, limits: TruncationLimits, data=None, *, _trusted=False):
        self.dims = dims
        self.limits = limits
        if _trusted:
            self._data = data
            return
        size = harmonic_set(dims.n1, limits.max_trig).size
        clean = {}
        for mono, arr in (data or {}).items():
            mono = tuple(int(v) for v in mono)
            if len(mono) != dims.nvars:
                raise DimensionError("monomial length does not match dimensions")
            j1, j2 = _mono_degrees(mono, dims.n1)
            if not limits.admits(j1, j2):
                continue
            arr = np.asarray(arr, dtype=complex)
            a = np.zeros(size, dtype=complex)
            n = min(size, arr.size)
            a[:n] = arr[:n]
            a[0] = a[0].real
            a[np.abs(a) < DROP_THRESHOLD] = 0
            if np.any(a):
                clean[mono] = a
        self._data = clean

    # -- construction -----------------------------------------------------
    @classmethod
    def zero(cls, dims, limits) -> "PoissonSeries":
        return cls(dims, limits, {}, _trusted=True)

    @classmethod
    def from_terms(cls, dims, limits, terms: Iterable[tuple[TermKey, float]]) -> "PoissonSeries":
        hs = harmonic_set(dims.n1, limits.max_trig)
        data: dict[tuple, np.ndarray] = {}
        for key, coef in terms:
            k = tuple(int(v) for v in key.k)
            if len(k) != dims.n1 or len(key.dp) != dims.n1 or len(key.dxy) != 2 * dims.n2:
                raise DimensionError("term key does not match dimensions")
            sign = _canonical_sign(k)
            if sign < 0:
                k = tuple(-v for v in k)
                if key.parity == "s":
                    coef = -coef
            if sign == 0 and key.parity == "s":
                continue
            if sum(abs(v) for v in k) > limits.max_trig:
                continue
            mono = tuple(key.dp) + tuple(key.dxy)
            arr = data.setdefault(mono, np.zeros(hs.size, dtype=complex))
            i = hs.index[k]
            arr[i] += coef if key.parity == "c" else -1j * coef
        return cls(dims, limits, data)

    @classmethod
    def term(cls, dims, limits, dp, dxy, k, parity="c", coef=1.0) -> "PoissonSeries":
        return cls.from_terms(dims, limits, [(TermKey(tuple(dp), tuple(dxy), tuple(k), parity), coef)])

    @classmethod
    def linear_in_p(cls, dims, limits, omega) -> "PoissonSeries":
        """The series ``omega . p``."""
        terms = []
        for j, w in enumerate(omega):
            dp = [0] * dims.n1
            dp[j] = 1
            terms.append((TermKey(tuple(dp), (0,) * (2 * dims.n2), (0,) * dims.n1, "c"), float(w)))
        return cls.from_terms(dims, limits, terms)

    @classmethod
    def harmonic_oscillators(cls, dims, limits, Omega) -> "PoissonSeries":
        """The series ``sum_j Omega_j (x_j^2 + y_j^2) / 2``."""
        terms = []
        n2 = dims.n2
        for l, w in enumerate(Omega):
            for off in (0, n2):
                dxy = [0] * (2 * n2)
                dxy[off + l] = 2
                terms.append((TermKey((0,) * dims.n1, tuple(dxy), (0,) * dims.n1, "c"), 0.5 * float(w)))
        return cls.from_terms(dims, limits, terms)

    # -- inspection -------------------------------------------------------
    @property
    def harmonics(self) -> HarmonicSet:
        return harmonic_set(self.dims.n1, self.limits.max_trig)

    def monomials(self):
        return self._data.keys()

    def coefficients(self, mono: tuple) -> np.ndarray:
        a = self._data.get(tuple(mono))
        if a is None:
            return np.zeros(self.harmonics.size, dtype=complex)
        return a.copy()

    def items(self):
        return self._data.items()

    def __len__(self) -> int:
        return sum(int(np.count_nonzero(a.real)) + int(np.count_nonzero(a.imag)) for a in self._data.values())

    def is_zero(self) -> bool:
        return not self._data

    def terms(self) -> Iterator[tuple[TermKey, float]]:
        """Yield ``(TermKey, coefficient)`` in lexicographic TermKey order."""
        n1 = self.dims.n1
        ks = self.harmonics.k
        out = []
        for mono, arr in self._data.items():
            dp, dxy = mono[:n1], mono[n1:]
            for i in np.nonzero(arr)[0]:
                k = tuple(int(v) for v in ks[i])
                if arr[i].real != 0.0:
                    out.append((TermKey(dp, dxy, k, "c"), float(arr[i].real)))
                if arr[i].imag != 0.0:
                    out.append((TermKey(dp, dxy, k, "s"), float(-arr[i].imag)))
        out.sort(key=lambda t: t[0])
        return iter(out)

    def coefficient(self, key: TermKey) -> float:
        k = tuple(key.k)
        parity = key.parity
        sign = 1.0
        if _canonical_sign(k) < 0:
            k = tuple(-v for v in k)
            if parity == "s":
                sign = -1.0
        arr = self._data.get(tuple(key.dp) + tuple(key.dxy))
        if arr is None or k not in self.harmonics.index:
            return 0.0
        c = arr[self.harmonics.index[k]]
        return sign * (c.real if parity == "c" else -c.imag)

    # -- arithmetic -------------------------------------------------------
    def _check(self, other: "PoissonSeries"):
        if self.dims != other.dims:
            raise DimensionError(f"dimension mismatch: {self.dims} vs {other.dims}")

    def _combine(self, other, sign):
        self._check(other)
        limits = self.limits if self.limits == other.limits else TruncationLimits(
            max(self.limits.max_j1, other.limits.max_j1),
            max(self.limits.max_l, other.limits.max_l),
            max(self.limits.max_trig, other.limits.max_trig))
        size = harmonic_set(self.dims.n1, limits.max_trig).size
        data = {}
        for src, sg in ((self, 1.0), (other, sign)):
            for mono, arr in src._data.items():
                acc = data.get(mono)
                if acc is None:
                    acc = data[mono] = np.zeros(size, dtype=complex)
                acc[:arr.size] += sg * arr
        return PoissonSeries(self.dims, limits, data)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, factor: float) -> "PoissonSeries":
        return PoissonSeries(self.dims, self.limits, {m: factor * a for m, a in self._data.items()})

    def __rmul__(self, factor):
        return self.scale(float(factor))

    def __mul__(self, other):
        if isinstance(other, PoissonSeries):
            return multiply(self, other)
        return self.scale(float(other))

    def with_limits(self, limits: TruncationLimits) -> "PoissonSeries":
        return PoissonSeries(self.dims, limits, self._data)

    def truncate(self, limits: TruncationLimits) -> "PoissonSeries":
        return self.with_limits(self.limits.tighter(limits))

    def select(self, j1=None, j2=None, kmin=0, kmax=None, where=None) -> "PoissonSeries":
        """Restrict to monomials of the given degrees and harmonics with ``kmin <= |k| <= kmax``."""
        n1 = self.dims.n1
        hs = self.harmonics
        kmax = self.limits.max_trig if kmax is None else kmax
        mask = (hs.norm >= kmin) & (hs.norm <= kmax)
        data = {}
        for mono, arr in self._data.items():
            d1, d2 = _mono_degrees(mono, n1)
            if j1 is not None and d1 != j1:
                continue
            if j2 is not None and d2 != j2:
                continue
            if where is not None and not where(mono):
                continue
            a = np.where(mask, arr, 0)
            if np.any(a):
                data[mono] = a
        return PoissonSeries(self.dims, self.limits, data, _trusted=True)

    def map_coefficients(self, fn) -> "PoissonSeries":
        """Apply ``fn(mono, k_array, coeffs) -> coeffs`` to every monomial."""
        ks = self.harmonics.k
        return PoissonSeries(self.dims, self.limits, {m: fn(m, ks, a.copy()) for m, a in self._data.items()})

    def norm(self) -> float:
        return float(sum(np.abs(a.real).sum() + np.abs(a.imag).sum() for a in self._data.values()))

    def max_abs(self) -> float:
        return max((float(max(np.abs(a.real).max(), np.abs(a.imag).max())) for a in self._data.values()),
                   default=0.0)

    def allclose(self, other: "PoissonSeries", atol: float) -> bool:
        return (self - other).max_abs() <= atol

    def constant_term(self) -> float:
        arr = self._data.get((0,) * self.dims.nvars)
        return 0.0 if arr is None else float(arr[0].real)

    # -- calculus ---------------------------------------------------------
    def diff_q(self, j: int) -> "PoissonSeries":
        kj = self.harmonics.k[:, j]
        return PoissonSeries(self.dims, self.limits, {m: 1j * kj * a for m, a in self._data.items()})

    def diff_var(self, v: int) -> "PoissonSeries":
        """Derivative with respect to polynomial variable ``v`` (p, then x, then y)."""
        data = {}
        for m, a in self._data.items():
            e = m[v]
            if e == 0:
                continue
            mm = list(m)
            mm[v] -= 1
            data[tuple(mm)] = e * a
        return PoissonSeries(self.dims, self.limits, data, _trusted=True)

    # -- evaluation -------------------------------------------------------
    def _mono_value(self, mono, p, x, y):
        n1, n2 = self.dims.n1, self.dims.n2
        v = 1.0
        for j in range(n1):
            if mono[j]:
                v *= p[j] ** mono[j]
        for l in range(n2):
            if mono[n1 + l]:
                v *= x[l] ** mono[n1 + l]
            if mono[n1 + n2 + l]:
                v *= y[l] ** mono[n1 + n2 + l]
        return v

    def evaluate(self, point: PhasePoint) -> float:
        """Value of the series at ``point`` (factored: one phase vector per call)."""
        self._check_point(point)
        if not self._data:
            return 0.0
        phase = np.exp(1j * (self.harmonics.k @ point.q))
        total = 0.0
        for mono, arr in self._data.items():
            total += self._mono_value(mono, point.p, point.x, point.y) * float(np.real(arr @ phase))
        return total

    def evaluate_terms(self, point: PhasePoint) -> float:
        """Value of the series at ``point`` by direct term-by-term summation."""
        self._check_point(point)
        total = 0.0
        for key, c in self.terms():
            arg = float(np.dot(key.k, point.q))
            trig = math.cos(arg) if key.parity == "c" else math.sin(arg)
            total += c * self._mono_value(key.dp + key.dxy, point.p, point.x, point.y) * trig
        return total

    def evaluate_many(self, P, Q, X, Y) -> np.ndarray:
        """Vectorised evaluation at many points; arguments have shape ``(npts, n)``."""
        Q = np.atleast_2d(Q)
        npts = Q.shape[0]
        out = np.zeros(npts)
        if not self._data:
            return out
        phase = np.exp(1j * (Q @ self.harmonics.k.T))
        n1, n2 = self.dims.n1, self.dims.n2
        P, X, Y = (np.reshape(a, (npts, -1)) for a in (P, X, Y))
        for mono, arr in self._data.items():
            mv = np.ones(npts)
            for j in range(n1):
                if mono[j]:
                    mv = mv * P[:, j] ** mono[j]
            for l in range(n2):
                if mono[n1 + l]:
                    mv = mv * X[:, l] ** mono[n1 + l]
                if mono[n1 + n2 + l]:
                    mv = mv * Y[:, l] ** mono[n1 + n2 + l]
            out += mv * np.real(phase @ arr)
        return out

    def _check_point(self, point: PhasePoint):
        if point.p.size != self.dims.n1 or point.q.size != self.dims.n1 or \
                point.x.size != self.dims.n2 or point.y.size != self.dims.n2:
            raise DimensionError("phase point does not match series dimensions")

    def __repr__(self):
        return f"PoissonSeries(dims={self.dims}, limits={self.limits}, monomials={len(self._data)}, terms={len(self)})"


# ---------------------------------------------------------------------------
# products and brackets

class _Sampler:
    """Caches grid samples of a series' monomials and their q-derivatives."""

    def __init__(self, series: PoissonSeries, grid: _Grid):
        self.grid = grid
        self._k = harmonic_set(grid.n1, grid.T).k
        size = len(self._k)
        self.coeffs = {m: _pad(a, size) for m, a in series._data.items()}
        self._vals: dict = {}
        self._dq: dict = {}

    def values(self, mono):
        v = self._vals.get(mono)
        if v is None:
            v = self._vals[mono] = self.grid.to_values(self.coeffs[mono])
        return v

    def has_q(self, mono, j) -> bool:
        return bool(np.any(self.coeffs[mono] * self._k[:, j]))

    def dq(self, mono, j):
        key = (mono, j)
        v = self._dq.get(key)
        if v is None:
            v = self._dq[key] = self.grid.to_values(1j * self._k[:, j] * self.coeffs[mono])
        return v


def _pad(arr, size):
    if arr.size == size:
        return arr
    out = np.zeros(size, dtype=complex)
    out[:arr.size] = arr
    return out


def _finish(dims, limits, acc, n1, T_out, N):
    # FFT round-off is relative to the largest sampled product feeding each output
    g_out = _grid(n1, T_out, N)
    data = {}
    for mono, (vals, scale) in acc.items():
        c = g_out.from_values(vals)
        cut = max(DROP_THRESHOLD, ROUNDOFF * scale)
        c.real[np.abs(c.real) < cut] = 0
        c.imag[np.abs(c.imag) < cut] = 0
        if np.any(c):
            data[mono] = c
    return PoissonSeries(dims, limits, data, _trusted=True)


def _accumulate(acc, out, vals):
    scale = float(np.abs(vals).max())
    if out in acc:
        prev, s = acc[out]
        acc[out] = (prev + vals, s + scale)
    else:
        acc[out] = (vals, scale)


def multiply(f: PoissonSeries, g: PoissonSeries) -> PoissonSeries:
    f._check(g)
    limits = f.limits.tighter(g.limits)
    n1 = f.dims.n1
    T_in = max(f.limits.max_trig, g.limits.max_trig)
    N = _grid_size(f.limits.max_trig, g.limits.max_trig, limits.max_trig)
    grid = _grid(n1, T_in, N)
    fs, gs = _Sampler(f, grid), _Sampler(g, grid)
    acc: dict = {}
    for a in f._data:
        for b in g._data:
            out = tuple(i + j for i, j in zip(a, b))
            if not limits.admits(*_mono_degrees(out, n1)):
                continue
            _accumulate(acc, out, fs.values(a) * gs.values(b))
    return _finish(f.dims, limits, acc, n1, limits.max_trig, N)


def poisson_bracket(f: PoissonSeries, g: PoissonSeries) -> PoissonSeries:
    """Poisson bracket with the convention

    {f,g} = sum_j (df/dq_j dg/dp_j - df/dp_j dg/dq_j)
          + sum_l (df/dy_l dg/dx_l - df/dx_l dg/dy_l).
    """
    f._check(g)
    dims = f.dims
    limits = f.limits.tighter(g.limits)
    n1, n2 = dims.n1, dims.n2
    if not f._data or not g._data:
        return PoissonSeries.zero(dims, limits)
    T_in = max(f.limits.max_trig, g.limits.max_trig)
    N = _grid_size(f.limits.max_trig, g.limits.max_trig, limits.max_trig)
    grid = _grid(n1, T_in, N)
    fs, gs = _Sampler(f, grid), _Sampler(g, grid)
    acc: dict = {}

    for a in f._data:
        for b in g._data:
            base = [i + j for i, j in zip(a, b)]
            # (p, q) pairs
            for j in range(n1):
                eb, ea = b[j], a[j]
                if not (eb or ea):
                    continue
                out = list(base)
                out[j] -= 1
                out = tuple(out)
                if not limits.admits(*_mono_degrees(out, n1)):
                    continue
                vals = None
                if eb and fs.has_q(a, j):
                    vals = eb * fs.dq(a, j) * gs.values(b)
                if ea and gs.has_q(b, j):
                    term = ea * fs.values(a) * gs.dq(b, j)
                    vals = -term if vals is None else vals - term
                if vals is not None:
                    _accumulate(acc, out, vals)
            # (y, x) pairs
            prod = None
            for l in range(n2):
                xi, yi = n1 + l, n1 + n2 + l
                w = a[yi] * b[xi] - a[xi] * b[yi]
                if w == 0:
                    continue
                out = list(base)
                out[xi] -= 1
                out[yi] -= 1
                out = tuple(out)
                if not limits.admits(*_mono_degrees(out, n1)):
                    continue
                if prod is None:
                    prod = fs.values(a) * gs.values(b)
                _accumulate(acc, out, w * prod)
    return _finish(dims, limits, acc, n1, limits.max_trig, N)


def lie_transform(chi: PoissonSeries, H: PoissonSeries, max_order: int = 40,
                  rel_tol: float = 0.0, terms_out: list | None = None) -> PoissonSeries:
    """``exp(L_chi) H = sum_i (1/i!) L_chi^i H`` with ``L_chi f = {chi, f}``.

    Stops at ``max_order``, when a Lie term vanishes, or when its norm drops
    below ``rel_tol * norm(H)``.  Each computed term ``(1/i!) L^i H`` is
    appended to ``terms_out`` when given.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    result = H
    if chi.is_zero():
        return H
    term = H
    ref = H.norm()
    for i in range(1, max_order + 1):
        term = poisson_bracket(chi, term).scale(1.0 / i)
        if term.is_zero():
            break
        if terms_out is not None:
            terms_out.append(term)
        result = result + term
        if rel_tol and term.norm() < rel_tol * ref:
            break
    return result


def series_norm(f: PoissonSeries) -> float:
    return f.norm()


def evaluate(f: PoissonSeries, point: PhasePoint) -> float:
    return f.evaluate(point)


# ---------------------------------------------------------------------------
# class bookkeeping

def fourier_block(knorm: int, K: int) -> int:
    return 0 if knorm == 0 else -(-knorm // K)


def reorder_fourier(f: PoissonSeries, K: int) -> list[tuple[ClassTag, PoissonSeries]]:
    """Partition ``f`` into well Fourier-ordered blocks ``(j1, j2, s)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    n1 = f.dims.n1
    hs = f.harmonics
    blocks = np.array([fourier_block(int(n), K) for n in hs.norm], dtype=np.int64)
    parts: dict[ClassTag, dict] = {}
    for mono, arr in f._data.items():
        j1, j2 = _mono_degrees(mono, n1)
        for s in np.unique(blocks[np.nonzero(arr)[0]]):
            a = np.where(blocks == s, arr, 0)
            parts.setdefault(ClassTag(j1, j2, int(s)), {})[mono] = a
    out = [(tag, PoissonSeries(f.dims, f.limits, d, _trusted=True)) for tag, d in parts.items()]
    out.sort(key=lambda t: (t[0].j1, t[0].j2, t[0].s))
    return out


def in_class(f: PoissonSeries, j1: int, j2: int, smax_K: int, well_ordered_s: int | None = None,
             K: int | None = None) -> bool:
    """Membership test for the class of homogeneous degree ``(j1, j2)`` and ``|k| <= smax_K``.

    With ``well_ordered_s`` and ``K`` given, additionally require
    ``|k| > (s - 1) K`` for ``s >= 1``.
    """
    n1 = f.dims.n1
    norms = f.harmonics.norm
    for mono, arr in f._data.items():
        if _mono_degrees(mono, n1) != (j1, j2):
            return False
        used = norms[np.nonzero(arr)[0]]
        if used.size and used.max() > smax_K:
            return False
        if well_ordered_s is not None and well_ordered_s >= 1 and used.size and used.min() <= (well_ordered_s - 1) * K:
            return False
    return True


def in_union_class(f: PoissonSeries, l: int, trig: int) -> bool:
    """Membership in the union of classes with ``2 j1 + j2 = l`` and ``|k| <= trig``."""
    n1 = f.dims.n1
    norms = f.harmonics.norm
    for mono, arr in f._data.items():
        j1, j2 = _mono_degrees(mono, n1)
        if 2 * j1 + j2 != l:
            return False
        used = norms[np.nonzero(arr)[0]]
        if used.size and used.max() > trig:
            return False
    return True


# ---------------------------------------------------------------------------
# action-angle view of secular degree 1 and 2

@functools.lru_cache(maxsize=None)
def _xy_to_u(a: tuple, b: tuple):
    """Expand ``x^a y^b`` in ``u = x + i y`` and ``ubar = x - i y``.

    Returns ``{(alpha, beta): coeff}``.
    """
    # x = (u + ubar)/2, y = (u - ubar)/(2i)
    n2 = len(a)
    poly = {((0,) * n2, (0,) * n2): 1.0 + 0j}
    for l in range(n2):
        for _ in range(a[l]):
            poly = _poly_mul_lin(poly, l, 0.5, 0.5)
        for _ in range(b[l]):
            poly = _poly_mul_lin(poly, l, 0.5 / 1j, -0.5 / 1j)
    return {k: v for k, v in poly.items() if v != 0}


@functools.lru_cache(maxsize=None)
def _u_to_xy(alpha: tuple, beta: tuple):
    """Expand ``u^alpha ubar^beta`` in ``x, y``.  Returns ``{(a, b): coeff}``."""
    n2 = len(alpha)
    poly = {((0,) * n2, (0,) * n2): 1.0 + 0j}
    for l in range(n2):
        for _ in range(alpha[l]):
            poly = _poly_mul_lin(poly, l, 1.0, 1j)
        for _ in range(beta[l]):
            poly = _poly_mul_lin(poly, l, 1.0, -1j)
    return {k: v for k, v in poly.items() if v != 0}


def _poly_mul_lin(poly, l, c0, c1):
    # multiply by (c0 * var0_l + c1 * var1_l)
    out: dict = {}
    for (e0, e1), v in poly.items():
        k0 = list(e0)
        k0[l] += 1
        key = (tuple(k0), e1)
        out[key] = out.get(key, 0) + c0 * v
        k1 = list(e1)
        k1[l] += 1
        key = (e0, tuple(k1))
        out[key] = out.get(key, 0) + c1 * v
    return out


@dataclass
class AAExpansion:
    """``Re sum C * p^dp * u^alpha * ubar^beta * exp(i k.q)`` with ``u_j = sqrt(2 J_j) exp(i phi_j)``.

    ``terms`` maps ``(dp, alpha, beta)`` to a complex array over the harmonic
    half set of ``limits.max_trig``.  For degree one this is the
    ``sqrt(2J_j) trig(k.q +- phi_j)`` basis; for degree two the
    ``2 sqrt(J_i J_j) trig(k.q +- phi_i +- phi_j)`` basis.
    """
    dims: Dimensions
    limits: TruncationLimits
    terms: dict = field(default_factory=dict)

    def items(self):
        return self.terms.items()

    def divisors(self, omega, Omega):
        """Yield ``(key, k_array, divisor_array)`` with divisor ``k.omega + (alpha - beta).Omega``."""
        ks = harmonic_set(self.dims.n1, self.limits.max_trig).k
        kw = ks @ np.asarray(omega, dtype=float)
        for key, arr in self.terms.items():
            _, alpha, beta = key
            shift = float(np.dot(np.subtract(alpha, beta), Omega)) if self.dims.n2 else 0.0
            yield key, arr, kw + shift

    def real_terms(self):
        """List ``(dp, k, sigma, cos_coeff, sin_coeff, radial)`` in the trig(k.q + sigma.phi) basis."""
        ks = harmonic_set(self.dims.n1, self.limits.max_trig).k
        out = []
        for (dp, alpha, beta), arr in self.terms.items():
            sigma = tuple(int(a - b) for a, b in zip(alpha, beta))
            for i in np.nonzero(arr)[0]:
                c = arr[i]
                out.append((dp, tuple(int(v) for v in ks[i]), sigma, float(c.real), float(-c.imag),
                            (alpha, beta)))
        return out


def to_action_angle(f: PoissonSeries) -> AAExpansion:
    n1, n2 = f.dims.n1, f.dims.n2
    out: dict = {}
    degree = None
    for mono, arr in f._data.items():
        d2 = sum(mono[n1:])
        if d2 not in (1, 2):
            raise ValueError("action-angle view needs secular degree 1 or 2")
        if degree is None:
            degree = d2
        elif d2 != degree:
            raise ValueError("action-angle view needs a homogeneous secular degree")
        dp = mono[:n1]
        a, b = mono[n1:n1 + n2], mono[n1 + n2:]
        for (alpha, beta), c in _xy_to_u(a, b).items():
            key = (dp, alpha, beta)
            if key in out:
                out[key] = out[key] + c * arr
            else:
                out[key] = c * arr
    return AAExpansion(f.dims, f.limits, out)


def from_action_angle(g: AAExpansion) -> PoissonSeries:
    size = harmonic_set(g.dims.n1, g.limits.max_trig).size
    data: dict = {}
    for (dp, alpha, beta), arr in g.terms.items():
        for (a, b), c in _u_to_xy(alpha, beta).items():
            mono = tuple(dp) + tuple(a) + tuple(b)
            acc = data.setdefault(mono, np.zeros(size, dtype=complex))
            acc += c * arr
    for mono, acc in data.items():
        acc[0] = acc[0].real
        tiny = np.abs(acc) < 1e-300
        acc[tiny] = 0
    return PoissonSeries(g.dims, g.limits, data)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"PSER1\x00\x00\x00"


def dumps(f: PoissonSeries) -> str:
    """Text form: one term per line, ``j1 | dp | dxy | k | c|s | coefficient``."""
    buf = io.StringIO()
    L = f.limits
    buf.write(f"# n1={f.dims.n1} n2={f.dims.n2} max_j1={L.max_j1} max_l={L.max_l} max_trig={L.max_trig}\n")
    for key, c in f.terms():
        j1 = sum(key.dp)
        buf.write(f"{j1} | {' '.join(map(str, key.dp))} | {' '.join(map(str, key.dxy))} | "
                  f"{' '.join(map(str, key.k))} | {key.parity} | {c:.17e}\n")
    return buf.getvalue()


def loads(text: str) -> PoissonSeries:
    lines = text.splitlines()
    header = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
    dims = Dimensions(int(header["n1"]), int(header["n2"]))
    limits = TruncationLimits(int(header["max_j1"]), int(header["max_l"]), int(header["max_trig"]))
    terms = []
    for line in lines[1:]:
        if not line.strip():
            continue
        _, dp, dxy, k, parity, coef = (s.strip() for s in line.split("|"))
        terms.append((TermKey(tuple(int(v) for v in dp.split()),
                              tuple(int(v) for v in dxy.split()) if dxy else (),
                              tuple(int(v) for v in k.split()), parity), float(coef)))
    return PoissonSeries.from_terms(dims, limits, terms)


def to_bytes(f: PoissonSeries) -> bytes:
    """Binary form (little endian).

    Header: 8-byte magic, five ``int32`` (n1, n2, max_j1, max_l, max_trig) and
    an ``int64`` term count.  Each record: ``n1 + 2 n2`` ``uint8`` exponents,
    ``n1`` ``int16`` harmonics, one ``uint8`` parity (0 cos, 1 sin) and a
    ``float64`` coefficient.
    """
    n1, n2 = f.dims.n1, f.dims.n2
    terms = list(f.terms())
    rec = np.dtype([("e", "u1", (n1 + 2 * n2,)), ("k", "<i2", (n1,)), ("par", "u1"), ("c", "<f8")])
    arr = np.zeros(len(terms), dtype=rec)
    for i, (key, c) in enumerate(terms):
        arr[i] = (key.dp + key.dxy, key.k, 0 if key.parity == "c" else 1, c)
    L = f.limits
    head = _MAGIC + struct.pack("<5iq", n1, n2, L.max_j1, L.max_l, L.max_trig, len(terms))
    return head + arr.tobytes()


def from_bytes(raw: bytes) -> PoissonSeries:
    if raw[:8] != _MAGIC:
        raise ValueError("not a serialized Poisson series")
    n1, n2, mj1, ml, mt, count = struct.unpack("<5iq", raw[8:36])
    dims = Dimensions(n1, n2)
    limits = TruncationLimits(mj1, ml, mt)
    rec = np.dtype([("e", "u1", (n1 + 2 * n2,)), ("k", "<i2", (n1,)), ("par", "u1"), ("c", "<f8")])
    arr = np.frombuffer(raw[36:], dtype=rec, count=count)
    terms = [(TermKey(tuple(int(v) for v in r["e"][:n1]), tuple(int(v) for v in r["e"][n1:]),
                      tuple(int(v) for v in r["k"]), "c" if r["par"] == 0 else "s"), float(r["c"]))
             for r in arr]
    return PoissonSeries.from_terms(dims, limits, terms)
