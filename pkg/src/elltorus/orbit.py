"""Transformation chain from normal-form coordinates to heliocentric states.

The chain maps normal-form coordinates ``(P, Q, X, Y)`` to Cartesian states by
the near-identity change ``K``, the secular rotation, the translation of the
actions by ``Lambda*`` and the Poincare-to-Cartesian map.  ``K`` is evaluated
numerically: each generator transports the coordinate functions by its Lie
series; these series are built once and cached.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (BodySystem, CartesianState, cartesian_to_elements, cartesian_to_poincare,
                       poincare_to_cartesian)
from .expansion import DiagonalizingMap, InitialHamiltonian
from .normalizer import GENERATORS, NormalizationState
from .series import Dimensions, PhasePoint, PoissonSeries, TruncationLimits, poisson_bracket

CHUNK = 2048


def _transport_increment(chi: PoissonSeries, g1: PoissonSeries, rel_tol: float, max_order: int) -> PoissonSeries:
    """``sum_{i>=1} L_chi^{i-1} g1 / i!``: the change of a coordinate whose first Lie derivative is ``g1``."""
    acc = g1
    term = g1
    ref = g1.norm()
    for i in range(2, max_order + 1):
        if term.is_zero() or term.norm() <= rel_tol * ref:
            break
        term = poisson_bracket(chi, term).scale(1.0 / i)
        acc = acc + term
    return acc


@dataclass
class Transport:
    """Increments of ``(p, q, x, y)`` under the time-one map of one generator."""
    dp: list
    dq: list
    dx: list
    dy: list

    @classmethod
    def build(cls, chi: PoissonSeries, rel_tol=1e-16, max_order=40, trig_factor=2) -> "Transport":
        """Lie-transport the coordinates of one generator.

        Nested brackets of a generator with harmonics up to ``k`` reach ``2k``
        at second order, so harmonics are kept up to
        ``min(trig_factor * max_trig, max(max_trig, 2k))``.
        """
        L = chi.limits
        T = min(trig_factor * L.max_trig, max(L.max_trig, 2 * max_harmonic(chi)))
        chi = chi.with_limits(TruncationLimits(L.max_j1, L.max_l, T))
        d = chi.dims
        n1, n2 = d.n1, d.n2

        def inc(g1):
            return _transport_increment(chi, g1, rel_tol, max_order)

        dp = [inc(chi.diff_q(j)) for j in range(n1)]
        dq = [inc(-chi.diff_var(d.p_index(j))) for j in range(n1)]
        dx = [inc(chi.diff_var(d.y_index(l))) for l in range(n2)]
        dy = [inc(-chi.diff_var(d.x_index(l))) for l in range(n2)]
        return cls(dp, dq, dx, dy)

    def apply(self, P, Q, X, Y):
        """Image of arrays of points with shape ``(npts, n)``."""
        series = self.dp + self.dq + self.dx + self.dy
        vals = evaluate_batch(series, P, Q, X, Y)
        n1, n2 = P.shape[1], X.shape[1]
        return (P + vals[:, :n1], Q + vals[:, n1:2 * n1],
                X + vals[:, 2 * n1:2 * n1 + n2], Y + vals[:, 2 * n1 + n2:])


def max_harmonic(f: PoissonSeries) -> int:
    """Largest ``|k|`` carrying a nonzero coefficient."""
    norms = f.harmonics.norm
    return max((int(norms[np.nonzero(a)[0]].max()) for _, a in f.items() if np.any(a)), default=0)


def evaluate_batch(series: list, P, Q, X, Y) -> np.ndarray:
    """Evaluate series sharing dimensions and harmonic set; result has shape ``(npts, len(series))``."""
    npts = Q.shape[0]
    out = np.zeros((npts, len(series)))
    live = [(i, s) for i, s in enumerate(series) if not s.is_zero()]
    if not live:
        return out
    d = live[0][1].dims
    n1, n2 = d.n1, d.n2
    ks = live[0][1].harmonics.k
    for lo in range(0, npts, CHUNK):
        hi = min(lo + CHUNK, npts)
        phase = np.exp(1j * (Q[lo:hi] @ ks.T))
        cache = {}
        for i, s in live:
            for mono, arr in s.items():
                mv = cache.get(mono)
                if mv is None:
                    mv = np.ones(hi - lo)
                    for j in range(n1):
                        if mono[j]:
                            mv = mv * P[lo:hi, j] ** mono[j]
                    for l in range(n2):
                        if mono[n1 + l]:
                            mv = mv * X[lo:hi, l] ** mono[n1 + l]
                        if mono[n1 + n2 + l]:
                            mv = mv * Y[lo:hi, l] ** mono[n1 + n2 + l]
                    cache[mono] = mv
                out[lo:hi, i] += mv * np.real(phase[:, :arr.size] @ arr)
    return out


@dataclass
class TorusPoint:
    Q0: np.ndarray
    omega_inf: np.ndarray


@dataclass
class TransformChain:
    """Forward map ``C = E . T . D . K`` from normal-form coordinates to Cartesian states.

    Parameters
    ----------
    system : BodySystem
    lambda_star : ndarray
        Reference actions.
    diag : DiagonalizingMap
        Secular rotation ``xi = A x``, ``eta = A y``.
    gens : list of PoissonSeries
        Generators in the order they were applied (step 1 ``chi0`` first).
    omega : ndarray
        Fast frequencies on the torus.
    """
    system: BodySystem
    lambda_star: np.ndarray
    diag: DiagonalizingMap
    gens: list
    omega: np.ndarray
    rel_tol: float = 1e-16
    max_order: int = 40
    trig_factor: int = 2
    _fwd: dict = field(default_factory=dict, repr=False)
    _inv: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, ih: InitialHamiltonian, state: NormalizationState | None = None, **kw) -> "TransformChain":
        if state is None:
            return cls(ih.system, ih.lambda_star, ih.diag, [], np.asarray(ih.frequencies0.omega), **kw)
        gens = [step[name] for step in state.gens for name in GENERATORS]
        return cls(ih.system, ih.lambda_star, ih.diag, gens, np.asarray(state.freq.omega), **kw)

    @property
    def dims(self) -> Dimensions:
        n = self.system.n
        return Dimensions(n, n)

    def _transport(self, i: int, sign: int) -> Transport:
        cache = self._fwd if sign > 0 else self._inv
        if i not in cache:
            chi = self.gens[i] if sign > 0 else -self.gens[i]
            cache[i] = Transport.build(chi, self.rel_tol, self.max_order, self.trig_factor)
        return cache[i]

    # -- the near-identity part ---------------------------------------------
    def apply_K(self, P, Q, X, Y):
        """``K`` on arrays of points: the last generator acts first."""
        P, Q, X, Y = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (P, Q, X, Y))
        for i in reversed(range(len(self.gens))):
            if not self.gens[i].is_zero():
                P, Q, X, Y = self._transport(i, 1).apply(P, Q, X, Y)
        return P, Q, X, Y

    def apply_K_inverse(self, P, Q, X, Y):
        P, Q, X, Y = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (P, Q, X, Y))
        for i in range(len(self.gens)):
            if not self.gens[i].is_zero():
                P, Q, X, Y = self._transport(i, -1).apply(P, Q, X, Y)
        return P, Q, X, Y

    # -- the remaining maps -------------------------------------------------
    def to_poincare(self, L, lam, x, y):
        """``T . D``: actions translated by ``Lambda*`` and secular variables rotated."""
        xi, eta = self.diag.to_secular(x, y)
        return self.lambda_star + L, lam, xi, eta

    def from_poincare(self, Lam, lam, xi, eta):
        x, y = self.diag.from_secular(xi, eta)
        return Lam - self.lambda_star, lam, x, y

    def forward(self, P, Q, X, Y) -> CartesianState:
        """Cartesian states of normal-form points (arrays ``(npts, n)`` or single vectors)."""
        single = np.ndim(Q) == 1
        L, lam, x, y = self.apply_K(P, Q, X, Y)
        Lam, lam, xi, eta = self.to_poincare(L, lam, x, y)
        st = poincare_to_cartesian(Lam, lam, xi, eta, self.system.mu, self.system.beta)
        if single:
            return CartesianState(st.r[0], st.rtilde[0])
        return st

    def inverse(self, state: CartesianState):
        """Normal-form coordinates ``(P, Q, X, Y)`` of Cartesian states."""
        single = state.r.ndim == 2
        Lam, lam, xi, eta = cartesian_to_poincare(state, self.system.mu, self.system.beta)
        L, lam, x, y = self.from_poincare(*(np.atleast_2d(a) for a in (Lam, lam, xi, eta)))
        P, Q, X, Y = self.apply_K_inverse(L, lam, x, y)
        if single:
            return P[0], Q[0], X[0], Y[0]
        return P, Q, X, Y


def push_point(chain: TransformChain, point: PhasePoint) -> CartesianState:
    """Forward image of a normal-form phase point."""
    return chain.forward(point.p, point.q, point.x, point.y)


def pull_point(chain: TransformChain, state: CartesianState) -> PhasePoint:
    """Normal-form coordinates of a Cartesian state."""
    P, Q, X, Y = chain.inverse(state)
    return PhasePoint(P, Q, X, Y)


def torus_initial_condition(chain: TransformChain, Q0=None) -> CartesianState:
    """State on the approximate torus at normal-form angles ``Q0`` (default zero)."""
    n = chain.system.n
    Q0 = np.zeros(n) if Q0 is None else np.asarray(Q0, dtype=float)
    z = np.zeros(n)
    return chain.forward(z, Q0, z, z)


def flow_on_torus(chain: TransformChain, Q0, t) -> CartesianState:
    """States ``C(0, Q0 + omega t, 0, 0)`` for an array of times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = chain.system.n
    Q = np.asarray(Q0, dtype=float)[None, :] + t[:, None] * chain.omega[None, :]
    z = np.zeros_like(Q)
    return chain.forward(z, Q, z, z)


def jacobian(f, v, h=1e-7):
    """Central-difference Jacobian of ``f: R^m -> R^m`` at ``v`` with per-coordinate steps ``h``."""
    v = np.asarray(v, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), v.shape)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        cols.append((f(v + e) - f(v - e)) / (2 * h[i]))
    return np.stack(cols, axis=1)


def symplectic_defect(J: np.ndarray, B: np.ndarray) -> float:
    """``max |J B J^T - B|`` for the Poisson matrix ``B``; zero for a canonical map."""
    return float(np.max(np.abs(J @ B @ J.T - B)))


def poisson_matrix(n1: int, n2: int) -> np.ndarray:
    """Brackets ``{z_a, z_b}`` of the coordinates ordered ``(q, p, x, y)``.

    ``{q_j, p_j} = 1`` and ``{y_l, x_l} = 1``.
    """
    m = 2 * n1 + 2 * n2
    B = np.zeros((m, m))
    i1, i2 = np.arange(n1), np.arange(n2)
    B[i1, n1 + i1] = 1.0
    B[n1 + i1, i1] = -1.0
    x, y = 2 * n1 + i2, 2 * n1 + n2 + i2
    B[y, x] = 1.0
    B[x, y] = -1.0
    return B


ORBIT_FIELDS = ("x", "y", "vx", "vy", "a", "e", "M", "varpi", "xi", "eta")


def write_orbit_csv(path, t, states: CartesianState, system: BodySystem):
    """One row per sample: time then, per planet, position, velocity, elements and ``(xi, eta)``."""
    r, p = np.asarray(states.r), np.asarray(states.rtilde)
    v = p / system.beta[None, :, None]
    el = cartesian_to_elements(states, system.mu, system.beta)
    _, _, xi, eta = cartesian_to_poincare(states, system.mu, system.beta)
    cols = [r[..., 0], r[..., 1], v[..., 0], v[..., 1], el.a, el.e, el.M, el.varpi, xi, eta]
    names = [f"{f}_{j + 1}" for f in ORBIT_FIELDS for j in range(system.n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        data = np.column_stack([np.asarray(t)] + [c.reshape(len(t), -1) for c in cols])
        for row in data:
            w.writerow([f"{x:.17e}" for x in row])


def read_orbit_csv(path):
    """Return ``(t, columns)`` with ``columns[name]`` an array over samples."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    cols = {n: data[:, i] for i, n in enumerate(names)}
    return cols.pop("t"), cols
