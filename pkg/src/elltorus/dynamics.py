"""Planar N-body dynamics in heliocentric canonical coordinates.

The Hamiltonian is split into a Keplerian part (one two-body problem per
planet) and a small interaction part made of the momentum cross terms and the
mutual attraction.  The Keplerian flow is advanced exactly with Gauss f and g
functions; the interaction flow is split into its momentum and position
pieces.  Element and Poincare conversions shared by the rest of the package
live here too.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.integrate import solve_ivp

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} at t = {time:.6g}")
        self.time = time


@dataclass(frozen=True)
class Elements:
    """Planar heliocentric osculating elements, one entry per planet.

    ``varpi`` is the longitude of the perihelion.
    """
    a: np.ndarray
    M: np.ndarray
    e: np.ndarray
    varpi: np.ndarray

    def __post_init__(self):
        for name in ("a", "M", "e", "varpi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class BodySystem:
    """Central mass ``m0`` and planets with masses ``m`` and initial elements."""
    m0: float
    m: np.ndarray
    elements: Elements
    G: float = 1.0
    names: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        if np.any(self.m < 0) or np.any(self.m >= self.m0):
            raise ValueError("planet masses must satisfy 0 <= m_j < m0")
        e = self.elements
        if np.any(e.a <= 0) or np.any(e.e < 0) or np.any(e.e >= 1):
            raise ValueError("elements need a > 0 and 0 <= e < 1")

    @property
    def n(self) -> int:
        return self.m.size

    @property
    def mu(self) -> np.ndarray:
        """Two-body gravitational parameters ``G (m0 + m_j)``."""
        return self.G * (self.m0 + self.m)

    @property
    def beta(self) -> np.ndarray:
        """Reduced masses ``m0 m_j / (m0 + m_j)``."""
        return self.m0 * self.m / (self.m0 + self.m)

    @property
    def mass_ratio(self) -> float:
        return float(self.m.max() / self.m0)

    def with_masses(self, m) -> "BodySystem":
        return BodySystem(self.m0, m, self.elements, self.G, self.names)

    def with_elements(self, elements: Elements) -> "BodySystem":
        return BodySystem(self.m0, self.m, elements, self.G, self.names)


def sjsu_system() -> BodySystem:
    """Planar Sun, Jupiter, Saturn and Uranus in AU, years and ``G = 1``."""
    m0 = TWO_PI ** 2
    m = m0 / np.array([1047.355, 3498.5, 22902.98])
    el = Elements(
        a=[5.20463727204700266, 9.54108529142232165, 19.2231635458410572],
        M=[3.04525729444853654, 5.32199311882584869, 0.19431922829271914],
        e=[0.04785365972484999, 0.05460848595674678, 0.04858667407651962],
        varpi=[0.24927354029554571, 1.61225062288036902, 2.99374344439246487],
    )
    return BodySystem(m0, m, el, 1.0, ("Jupiter", "Saturn", "Uranus"))


@dataclass
class CartesianState:
    """Heliocentric positions ``r`` and conjugate momenta ``rtilde``, shape ``(..., n, 2)``."""
    r: np.ndarray
    rtilde: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.rtilde = np.asarray(self.rtilde, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r.ravel(), self.rtilde.ravel()])

    @classmethod
    def from_vector(cls, v, n) -> "CartesianState":
        v = np.asarray(v, dtype=float)
        return cls(v[:2 * n].reshape(n, 2), v[2 * n:].reshape(n, 2))


# ---------------------------------------------------------------------------
# Kepler equation and element conversions

def solve_kepler(M, e, tol=1e-15, max_iter=50):
    """Eccentric anomaly from mean anomaly by Newton iteration."""
    M = np.asarray(M, dtype=float)
    e = np.asarray(e, dtype=float)
    if np.any(e >= 1) or np.any(e < 0):
        raise DomainError("Kepler equation needs 0 <= e < 1")
    Mr = np.mod(M + math.pi, TWO_PI) - math.pi
    E = Mr + e * np.sin(Mr)
    for _ in range(max_iter):
        dE = (E - e * np.sin(E) - Mr) / (1.0 - e * np.cos(E))
        E = E - dE
        if np.all(np.abs(dE) <= tol * np.maximum(1.0, np.abs(E))):
            break
    return E + (M - Mr)


def elements_to_cartesian(elements: Elements, mu, beta) -> CartesianState:
    """Positions and momenta ``beta * v`` of the two-body orbits with parameters ``mu``."""
    a, M, e, w = elements.a, elements.M, elements.e, elements.varpi
    if np.any(e >= 1) or np.any(a <= 0):
        raise DomainError("elements_to_cartesian needs a bound orbit")
    E = solve_kepler(M, e)
    cE, sE = np.cos(E), np.sin(E)
    s = np.sqrt(1.0 - e * e)
    xo, yo = a * (cE - e), a * s * sE
    n = np.sqrt(mu / a ** 3)
    rr = 1.0 - e * cE
    vxo, vyo = -a * n * sE / rr, a * n * s * cE / rr
    cw, sw = np.cos(w), np.sin(w)
    r = np.stack([cw * xo - sw * yo, sw * xo + cw * yo], axis=-1)
    v = np.stack([cw * vxo - sw * vyo, sw * vxo + cw * vyo], axis=-1)
    return CartesianState(r, v * np.asarray(beta)[..., None])


def cartesian_to_elements(state: CartesianState, mu, beta) -> Elements:
    r, v = state.r, state.rtilde / np.asarray(beta)[..., None]
    x, y = r[..., 0], r[..., 1]
    vx, vy = v[..., 0], v[..., 1]
    rn = np.hypot(x, y)
    v2 = vx * vx + vy * vy
    energy = 0.5 * v2 - mu / rn
    if np.any(energy >= 0):
        raise DomainError("cartesian_to_elements needs a bound orbit")
    a = -mu / (2.0 * energy)
    ex = (v2 - mu / rn) * x / mu - (x * vx + y * vy) * vx / mu
    ey = (v2 - mu / rn) * y / mu - (x * vx + y * vy) * vy / mu
    e = np.hypot(ex, ey)
    varpi = np.arctan2(ey, ex)
    # eccentric anomaly from the true anomaly, so that M + varpi stays exact as e -> 0
    f = np.arctan2(y, x) - varpi
    E = 2.0 * np.arctan2(np.sqrt(1.0 - e) * np.sin(0.5 * f), np.sqrt(1.0 + e) * np.cos(0.5 * f))
    M = E - e * np.sin(E)
    return Elements(a, np.mod(M, TWO_PI), e, np.mod(varpi, TWO_PI))


def poincare_variables(elements: Elements, mu, beta):
    """Return ``(Lambda, lam, xi, eta)`` of the given elements."""
    a, M, e, w = elements.a, elements.M, elements.e, elements.varpi
    if np.any(e >= 1) or np.any(e < 0):
        raise DomainError("Poincare variables need 0 <= e < 1")
    Lam = np.asarray(beta) * np.sqrt(mu * a)
    rho = np.sqrt(2.0 * Lam) * np.sqrt(1.0 - np.sqrt(1.0 - e * e))
    return Lam, M + w, rho * np.cos(w), -rho * np.sin(w)


def poincare_to_elements(Lam, lam, xi, eta, mu, beta) -> Elements:
    Lam = np.asarray(Lam, dtype=float)
    Gam = 0.5 * (np.asarray(xi) ** 2 + np.asarray(eta) ** 2)
    if np.any(Lam <= 0) or np.any(Gam >= Lam):
        raise DomainError("Poincare point outside the bound-orbit domain (xi^2 + eta^2 >= 2 Lambda)")
    a = (Lam / np.asarray(beta)) ** 2 / mu
    g = Gam / Lam
    e = np.sqrt(g * (2.0 - g))
    w = np.arctan2(-np.asarray(eta), np.asarray(xi))
    return Elements(a, np.mod(lam - w, TWO_PI), e, np.mod(w, TWO_PI))


def poincare_to_cartesian(Lam, lam, xi, eta, mu, beta) -> CartesianState:
    """The map from Poincare variables to heliocentric positions and momenta."""
    return elements_to_cartesian(poincare_to_elements(Lam, lam, xi, eta, mu, beta), mu, beta)


def cartesian_to_poincare(state: CartesianState, mu, beta):
    return poincare_variables(cartesian_to_elements(state, mu, beta), mu, beta)


# ---------------------------------------------------------------------------
# Hamiltonian and first integrals

def hamiltonian(system: BodySystem, state: CartesianState) -> np.ndarray:
    """Total energy ``T0 + U0 + T1 + U1``; broadcasts over leading axes."""
    r, p = state.r, state.rtilde
    G, m0, m, beta = system.G, system.m0, system.m, system.beta
    T0 = 0.5 * np.sum(np.sum(p * p, axis=-1) / beta, axis=-1)
    U0 = -G * m0 * np.sum(m / np.linalg.norm(r, axis=-1), axis=-1)
    T1 = 0.0
    U1 = 0.0
    n = system.n
    for i in range(n):
        for j in range(i + 1, n):
            T1 = T1 + np.sum(p[..., i, :] * p[..., j, :], axis=-1) / m0
            U1 = U1 - G * m[i] * m[j] / np.linalg.norm(r[..., i, :] - r[..., j, :], axis=-1)
    return T0 + U0 + T1 + U1


def angular_momentum(state: CartesianState) -> np.ndarray:
    r, p = state.r, state.rtilde
    return np.sum(r[..., 0] * p[..., 1] - r[..., 1] * p[..., 0], axis=-1)


# ---------------------------------------------------------------------------
# SBAB3 splitting

SBAB3 = {
    "kick": (1.0 / 12.0, 5.0 / 12.0, 5.0 / 12.0, 1.0 / 12.0),
    "drift": (0.5 - math.sqrt(5.0) / 10.0, math.sqrt(5.0) / 5.0, 0.5 - math.sqrt(5.0) / 10.0),
}
SABA3 = {
    "drift": (0.5 - math.sqrt(15.0) / 10.0, math.sqrt(15.0) / 10.0, math.sqrt(15.0) / 10.0,
              0.5 - math.sqrt(15.0) / 10.0),
    "kick": (5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0),
}


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.04
    scheme: str = "SBAB3"
    precision: str = "standard"
    sample_every: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("SBAB3", "SABA3"):
            raise ValueError(f"unknown scheme {self.scheme}")
        if self.precision not in ("standard", "extended"):
            raise ValueError(f"unknown precision {self.precision}")

    @property
    def steps_per_sample(self) -> int:
        k = self.sample_every / self.dt
        n = int(round(k))
        if n < 1 or abs(k - n) > 1e-9 * k:
            raise ValueError("sample_every must be an integer multiple of dt")
        return n


@nb.njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


@nb.njit(cache=True)
def _kepler_increment(x, y, vx, vy, mu, dt, out):
    """Increments ``(dx, dy, dvx, dvy)`` of the two-body flow over ``dt``."""
    r0 = math.sqrt(x * x + y * y)
    v2 = vx * vx + vy * vy
    alpha = 2.0 / r0 - v2 / mu  # 1/a
    if alpha <= 0.0:
        return False
    a = 1.0 / alpha
    n = math.sqrt(mu * alpha * alpha * alpha)
    ec = 1.0 - r0 * alpha
    es = (x * vx + y * vy) / math.sqrt(mu * a)
    dM = n * dt
    # Kepler equation for the eccentric anomaly increment
    dE = dM
    for _ in range(60):
        s, c = math.sin(dE), math.cos(dE)
        omc = 2.0 * math.sin(0.5 * dE) ** 2
        f = dE - ec * s + es * omc - dM
        fp = 1.0 - ec * c + es * s
        step = f / fp
        dE -= step
        if abs(step) <= 1e-16 * max(1.0, abs(dE)):
            break
    s = math.sin(dE)
    omc = 2.0 * math.sin(0.5 * dE) ** 2
    r = a * (1.0 - ec * (1.0 - omc) + es * s)
    fm1 = -a / r0 * omc
    g = dt - (dE - s) / n
    fdot = -math.sqrt(mu * a) * s / (r * r0)
    gdm1 = -a / r * omc
    out[0] = fm1 * x + g * vx
    out[1] = fm1 * y + g * vy
    out[2] = fdot * x + gdm1 * vx
    out[3] = fdot * y + gdm1 * vy
    return True


@nb.njit(cache=True)
def _drift(r, p, rc, pc, beta, mu, dt, compensated):
    inc = np.empty(4)
    for j in range(r.shape[0]):
        vx = (p[j, 0] + pc[j, 0]) / beta[j]
        vy = (p[j, 1] + pc[j, 1]) / beta[j]
        ok = _kepler_increment(r[j, 0] + rc[j, 0], r[j, 1] + rc[j, 1], vx, vy, mu[j], dt, inc)
        if not ok:
            return False
        d = (inc[0], inc[1], inc[2] * beta[j], inc[3] * beta[j])
        if compensated:
            for c in range(2):
                s, e = _two_sum(r[j, c], d[c] + rc[j, c])
                r[j, c] = s
                rc[j, c] = e
                s, e = _two_sum(p[j, c], d[2 + c] + pc[j, c])
                p[j, c] = s
                pc[j, c] = e
        else:
            r[j, 0] += d[0]
            r[j, 1] += d[1]
            p[j, 0] += d[2]
            p[j, 1] += d[3]
    return True


@nb.njit(cache=True)
def _add(x, xc, i, c, d, compensated):
    if compensated:
        s, e = _two_sum(x[i, c], d + xc[i, c])
        x[i, c] = s
        xc[i, c] = e
    else:
        x[i, c] += d


@nb.njit(cache=True)
def _momentum_shift(r, p, rc, pc, m0, tau, compensated):
    # flow of (1/m0) sum_{i<j} p_i . p_j: positions move by the other momenta
    n = r.shape[0]
    sx = 0.0
    sy = 0.0
    for j in range(n):
        sx += p[j, 0] + pc[j, 0]
        sy += p[j, 1] + pc[j, 1]
    for i in range(n):
        _add(r, rc, i, 0, tau * (sx - p[i, 0] - pc[i, 0]) / m0, compensated)
        _add(r, rc, i, 1, tau * (sy - p[i, 1] - pc[i, 1]) / m0, compensated)


@nb.njit(cache=True)
def _mutual_kick(r, p, rc, pc, G, m, tau, compensated):
    n = r.shape[0]
    fx = np.zeros(n)
    fy = np.zeros(n)
    for i in range(n):
        for j in range(i + 1, n):
            dx = (r[i, 0] + rc[i, 0]) - (r[j, 0] + rc[j, 0])
            dy = (r[i, 1] + rc[i, 1]) - (r[j, 1] + rc[j, 1])
            d2 = dx * dx + dy * dy
            k = G * m[i] * m[j] / (d2 * math.sqrt(d2))
            fx[i] -= k * dx
            fy[i] -= k * dy
            fx[j] += k * dx
            fy[j] += k * dy
    for i in range(n):
        _add(p, pc, i, 0, tau * fx[i], compensated)
        _add(p, pc, i, 1, tau * fy[i], compensated)


@nb.njit(cache=True)
def _kick(r, p, rc, pc, G, m0, m, tau, compensated):
    _momentum_shift(r, p, rc, pc, m0, 0.5 * tau, compensated)
    _mutual_kick(r, p, rc, pc, G, m, tau, compensated)
    _momentum_shift(r, p, rc, pc, m0, 0.5 * tau, compensated)


@nb.njit(cache=True)
def _run(r, p, rc, pc, G, m0, m, beta, mu, dt, kick_first, kicks, drifts, nsamples, per_sample,
         out_r, out_p, compensated):
    """Advance and record ``nsamples`` samples; returns the count completed."""
    nk = kicks.shape[0]
    nd = drifts.shape[0]
    for s in range(nsamples):
        for _ in range(per_sample):
            if kick_first:
                for i in range(nd):
                    _kick(r, p, rc, pc, G, m0, m, kicks[i] * dt, compensated)
                    if not _drift(r, p, rc, pc, beta, mu, drifts[i] * dt, compensated):
                        return s
                _kick(r, p, rc, pc, G, m0, m, kicks[nk - 1] * dt, compensated)
            else:
                for i in range(nk):
                    if not _drift(r, p, rc, pc, beta, mu, drifts[i] * dt, compensated):
                        return s
                    _kick(r, p, rc, pc, G, m0, m, kicks[i] * dt, compensated)
                if not _drift(r, p, rc, pc, beta, mu, drifts[nd - 1] * dt, compensated):
                    return s
        for j in range(r.shape[0]):
            for c in range(2):
                out_r[s, j, c] = r[j, c] + rc[j, c]
                out_p[s, j, c] = p[j, c] + pc[j, c]
        # collision guard
        for i in range(r.shape[0]):
            for j in range(i + 1, r.shape[0]):
                dx = r[i, 0] - r[j, 0]
                dy = r[i, 1] - r[j, 1]
                if dx * dx + dy * dy <= 0.0 or not math.isfinite(dx + dy):
                    return s
    return nsamples


@dataclass
class Trajectory:
    """Samples ``t`` (yr) with positions ``r`` and momenta ``rtilde`` of shape ``(nt, n, 2)``."""
    t: np.ndarray
    r: np.ndarray
    rtilde: np.ndarray

    def state(self, i=slice(None)) -> CartesianState:
        return CartesianState(self.r[i], self.rtilde[i])


def integrate(system: BodySystem, state0: CartesianState, t_span: float,
              cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Integrate ``t_span`` years (negative for backward) sampling every ``cfg.sample_every`` years.

    The first sample is the initial state at ``t = 0``.
    """
    per = cfg.steps_per_sample
    nsamples = int(round(abs(t_span) / cfg.sample_every))
    sign = 1.0 if t_span >= 0 else -1.0
    r = np.array(state0.r, dtype=float).copy()
    p = np.array(state0.rtilde, dtype=float).copy()
    rc = np.zeros_like(r)
    pc = np.zeros_like(p)
    out_r = np.empty((nsamples + 1,) + r.shape)
    out_p = np.empty_like(out_r)
    out_r[0], out_p[0] = r, p
    coeffs = SBAB3 if cfg.scheme == "SBAB3" else SABA3
    done = _run(r, p, rc, pc, system.G, system.m0, system.m, system.beta, system.mu, sign * cfg.dt,
                cfg.scheme == "SBAB3", np.array(coeffs["kick"]), np.array(coeffs["drift"]), nsamples, per,
                out_r[1:], out_p[1:], cfg.precision == "extended")
    if done < nsamples:
        raise IntegrationError("integration failed (collision, unbound orbit or overflow)",
                               sign * (done + 1) * cfg.sample_every)
    t = sign * cfg.sample_every * np.arange(nsamples + 1)
    return Trajectory(t, out_r, out_p)


def step_map(system: BodySystem, cfg: IntegratorConfig = IntegratorConfig()):
    """Return ``f(vector) -> vector`` advancing one step; vectors are ``(r, rtilde)`` flattened."""
    n = system.n
    coeffs = SBAB3 if cfg.scheme == "SBAB3" else SABA3
    kicks, drifts = np.array(coeffs["kick"]), np.array(coeffs["drift"])

    def f(v):
        st = CartesianState.from_vector(v, n)
        r, p = st.r.copy(), st.rtilde.copy()
        rc, pc = np.zeros_like(r), np.zeros_like(p)
        out_r = np.empty((1,) + r.shape)
        out_p = np.empty_like(out_r)
        _run(r, p, rc, pc, system.G, system.m0, system.m, system.beta, system.mu, cfg.dt,
             cfg.scheme == "SBAB3", kicks, drifts, 1, 1, out_r, out_p, False)
        return np.concatenate([out_r[0].ravel(), out_p[0].ravel()])

    return f


def equations_of_motion(system: BodySystem):
    """Right-hand side of Hamilton's equations for ``solve_ivp``."""
    n, G, m0, m, beta = system.n, system.G, system.m0, system.m, system.beta

    def rhs(_t, v):
        r = v[:2 * n].reshape(n, 2)
        p = v[2 * n:].reshape(n, 2)
        ptot = p.sum(axis=0)
        dr = p / beta[:, None] + (ptot[None, :] - p) / m0
        rn = np.linalg.norm(r, axis=1)
        dp = -G * m0 * m[:, None] * r / rn[:, None] ** 3
        for i in range(n):
            for j in range(i + 1, n):
                d = r[i] - r[j]
                f = G * m[i] * m[j] * d / np.dot(d, d) ** 1.5
                dp[i] -= f
                dp[j] += f
        return np.concatenate([dr.ravel(), dp.ravel()])

    return rhs


def integrate_reference(system: BodySystem, state0: CartesianState, t_eval, rtol=1e-13, atol=1e-15):
    """Non-symplectic reference solution with an embedded Runge-Kutta pair (DOP853)."""
    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(equations_of_motion(system), (0.0, float(t_eval[-1])), state0.as_vector(),
                    method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(sol.message)
    n = system.n
    y = sol.y.T
    return Trajectory(t_eval, y[:, :2 * n].reshape(-1, n, 2), y[:, 2 * n:].reshape(-1, n, 2))


def initial_state(system: BodySystem) -> CartesianState:
    return elements_to_cartesian(system.elements, system.mu, system.beta)


def trajectory_poincare(system: BodySystem, traj: Trajectory):
    """Poincare variables ``(Lambda, lam, xi, eta)`` of every sample, each shaped ``(nt, n)``."""
    return cartesian_to_poincare(traj.state(), system.mu, system.beta)
