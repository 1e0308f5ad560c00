"""Expansion of the planar planetary Hamiltonian around a reference set of fast actions.

The Hamiltonian is written in Poincare variables ``(Lambda, lambda, xi, eta)``,
translated by ``L = Lambda - Lambda*`` and expanded as a Poisson series in
``(L, lambda, xi, eta)``.  Positions and momenta of each planet are computed as
truncated Taylor jets in ``(L, xi, eta)`` sampled on a grid of mean
longitudes; pair interactions are combined on a 2-D grid and Fourier
transformed.  The quadratic secular part is finally diagonalized by an
orthogonal substitution ``xi = A x``, ``eta = A y``.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynamics import (BodySystem, Elements, IntegratorConfig, cartesian_to_elements, initial_state,
                       integrate, sjsu_system)
from .jets import Jet, JetSpace
from .series import Dimensions, PoissonSeries, TruncationLimits, dumps, from_bytes, harmonic_set, to_bytes


class ExpansionError(ValueError):
    pass


@dataclass(frozen=True)
class ExpansionConfig:
    """Truncation of the initial expansion.

    ``kepler_order`` is the highest power of ``L`` kept in the Keplerian part
    (terms above ``limits.max_j1`` are reported but cannot enter the series).
    ``grid`` is the number of mean-longitude samples per planet.
    """
    limits: TruncationLimits
    kepler_order: int = 4
    grid: int = 128

    def __post_init__(self):
        if self.kepler_order < 1:
            raise ValueError("kepler_order must be >= 1")
        if self.grid < 2 * self.limits.max_trig + 2:
            raise ValueError("angle grid too coarse for the trigonometric limit")


@dataclass(frozen=True)
class FrequencyPair:
    omega: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).copy())
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).copy())
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.Omega))):
            raise ValueError("frequencies must be finite")


@dataclass(frozen=True)
class DiagonalizingMap:
    """Orthogonal matrix ``A`` with ``xi = A x`` and ``eta = A y``."""
    A: np.ndarray

    def to_secular(self, x, y):
        # row vectors, so stacks of points with shape (npts, n) work too
        return np.asarray(x) @ self.A.T, np.asarray(y) @ self.A.T

    def from_secular(self, xi, eta):
        return np.asarray(xi) @ self.A, np.asarray(eta) @ self.A

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))


@dataclass
class InitialHamiltonian:
    """Expanded Hamiltonian in the variables ``(p, q, x, y) = (L, lambda, x, y)``.

    Attributes
    ----------
    H : PoissonSeries
        Full series including ``n* . L`` and the diagonal quadratic secular part.
    H_poincare : PoissonSeries
        Same expansion before the secular diagonalization, in ``(L, lambda, xi, eta)``.
    constant : float
        Value at ``L = xi = eta = 0`` averaged over the angles, left out of ``H``.
    kepler : list of PoissonSeries
        Keplerian terms by degree in ``L``, from 2 up to ``kepler_order``.
    """
    system: BodySystem
    lambda_star: np.ndarray
    limits: TruncationLimits
    H: PoissonSeries
    H_poincare: PoissonSeries
    constant: float
    frequencies0: FrequencyPair
    diag: DiagonalizingMap
    kepler: list = field(default_factory=list)
    secular_matrix: np.ndarray = None

    @property
    def mean_motions(self) -> np.ndarray:
        return self.frequencies0.omega

    @property
    def mu(self) -> float:
        return self.system.mass_ratio

    def blocks(self, K: int):
        from .series import reorder_fourier
        return reorder_fourier(self.H, K)

    def manifest(self) -> dict:
        return {
            "lambda_star": self.lambda_star.tolist(),
            "n_star": self.frequencies0.omega.tolist(),
            "nu0": self.frequencies0.Omega.tolist(),
            "mu": self.mu,
            "constant": self.constant,
            "diag": self.diag.A.tolist(),
            "limits": {"max_j1": self.limits.max_j1, "max_l": self.limits.max_l,
                       "max_trig": self.limits.max_trig},
        }

    @classmethod
    def read(cls, out_dir, system: BodySystem, stem="H0") -> "InitialHamiltonian":
        """Load what :meth:`write` stored; ``H_poincare`` and ``kepler`` are not restored."""
        from pathlib import Path
        out = Path(out_dir)
        H = from_bytes((out / f"{stem}.bin").read_bytes())
        meta = json.loads((out / f"{stem}.json").read_text())
        return cls(system, np.array(meta["lambda_star"]), H.limits, H, None, float(meta["constant"]),
                   FrequencyPair(meta["n_star"], meta["nu0"]), DiagonalizingMap(np.array(meta["diag"])))

    def write(self, out_dir, stem="H0"):
        """Write ``<stem>.txt``, ``<stem>.bin`` and ``<stem>.json``; return the paths."""
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}.txt", out / f"{stem}.bin", out / f"{stem}.json"]
        paths[0].write_text(dumps(self.H))
        paths[1].write_bytes(to_bytes(self.H))
        paths[2].write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return paths


# ---------------------------------------------------------------------------
# Poincare variables and the Keplerian part

def poincare_variables(system: BodySystem, elements: Elements | None = None):
    """``(Lambda, lambda, xi, eta)`` of ``elements`` (default: the system's initial elements)."""
    from .dynamics import poincare_variables as _pv
    return _pv(system.elements if elements is None else elements, system.mu, system.beta)


def kepler_energy(system: BodySystem, Lam) -> float:
    """Keplerian energy ``-sum mu_j^2 beta_j^3 / (2 Lambda_j^2)``."""
    Lam = np.asarray(Lam, dtype=float)
    return float(-np.sum(system.mu ** 2 * system.beta ** 3 / (2.0 * Lam ** 2)))


def mean_motions(system: BodySystem, lambda_star) -> np.ndarray:
    lam = np.asarray(lambda_star, dtype=float)
    return system.mu ** 2 * system.beta ** 3 / lam ** 3


def kepler_part(system: BodySystem, lambda_star, order: int) -> list[np.ndarray]:
    """Taylor coefficients of the Keplerian energy in ``L``, one vector per degree.

    Entry ``d`` (``d = 0 .. order``) holds the coefficients of ``L_j^d``; entry 1
    is the vector of mean motions.
    """
    lam = np.asarray(lambda_star, dtype=float)
    if np.any(lam <= 0):
        raise ExpansionError("reference actions must be positive")
    c = system.mu ** 2 * system.beta ** 3 / 2.0
    # -c / (lam + L)^2 = -c sum_d (d + 1) (-L)^d / lam^(d + 2)
    return [-c * (d + 1) * (-1.0) ** d / lam ** (d + 2) for d in range(order + 1)]


def _kepler_series(dims, limits, coeffs, start):
    terms = {}
    nv = dims.nvars
    for d in range(start, len(coeffs)):
        for j in range(dims.n1):
            e = [0] * nv
            e[j] = d
            terms[tuple(e)] = np.array([coeffs[d][j]], dtype=complex)
    return PoissonSeries(dims, limits, terms)


# ---------------------------------------------------------------------------
# heliocentric positions and momenta as jets

def _planet_jets(space, offset, lam_star, beta, mu, angle, iterations):
    """Position and momentum jets of one planet; variables at ``offset`` are ``(L, xi, eta)``."""
    L = Jet.variable(space, offset, lam_star)  # Lambda = Lambda* + L
    xi = Jet.variable(space, offset + 1)
    eta = Jet.variable(space, offset + 2)
    inv_lam = L.power(-1.0)
    g = (xi * xi + eta * eta) * 0.5 * inv_lam
    two_minus_g = 2.0 - g
    s = (two_minus_g * inv_lam * 0.5).sqrt()
    k = xi * s
    h = -(eta * s)
    bb = two_minus_g.power(-1.0)
    a = L * L * (1.0 / (beta * beta * mu))
    # eccentric longitude F = angle + d with d = k sin F - h cos F
    d = Jet.constant(space, 0.0)
    for _ in range(iterations):
        sF, cF = d.sin_cos_shift(angle)
        d = k * sF - h * cF
    sF, cF = d.sin_cos_shift(angle)
    hk = h * k * bb
    one_h = 1.0 - h * h * bb
    one_k = 1.0 - k * k * bb
    X = a * (one_h * cF + hk * sF - k)
    Y = a * (one_k * sF + hk * cF - h)
    r = a * (1.0 - k * cF - h * sF)
    scale = (a * mu).sqrt() * r.power(-1.0) * beta
    PX = scale * (hk * cF - one_h * sF)
    PY = scale * (one_k * cF - hk * sF)
    return X, Y, PX, PY


def _pair_jets(system, lambda_star, i, j, space, grid):
    G = system.G
    theta = 2.0 * math.pi * np.arange(grid) / grid
    it = space.max_weight + 1
    Xi, Yi, PXi, PYi = _planet_jets(space, 0, lambda_star[i], system.beta[i], system.mu[i],
                                    theta[:, None], it)
    Xj, Yj, PXj, PYj = _planet_jets(space, 3, lambda_star[j], system.beta[j], system.mu[j],
                                    theta[None, :], it)
    dx, dy = Xi - Xj, Yi - Yj
    d2 = dx * dx + dy * dy
    if np.any(np.asarray(d2.const) <= 0):
        raise ExpansionError("reference circular orbits intersect")
    inv = d2.power(-0.5)
    U1 = inv * (-G * system.m[i] * system.m[j])
    T1 = (PXi * PXj + PYi * PYj) * (1.0 / system.m0)
    return U1 + T1


def _dalembert_mask(ks, d_secular):
    tot = ks.sum(axis=1)
    return ((tot - d_secular) % 2 == 0) & (np.abs(tot) <= d_secular)


def disturbing_expansion(system: BodySystem, lambda_star, limits: TruncationLimits, grid: int = 128,
                         noise: float = 1e-15, dalembert: bool = True) -> PoissonSeries:
    """Poisson series of the interaction terms in ``(L, lambda, xi, eta)``.

    Includes the angle-averaged constant.  Coefficients below ``noise`` times the
    largest sample of their monomial are treated as Fourier round-off.  With
    ``dalembert`` the harmonics forbidden by the rotational symmetry are set to
    zero instead of keeping their round-off.
    """
    n = system.n
    dims = Dimensions(n, n)
    hs = harmonic_set(n, limits.max_trig)
    space = JetSpace((2, 1, 1, 2, 1, 1), limits.max_l, (True, False, False, True, False, False),
                     limits.max_j1)
    lambda_star = np.asarray(lambda_star, dtype=float)
    ratio = np.min(np.abs(np.subtract.outer(lambda_star, lambda_star)) + np.eye(n))
    if ratio <= 0:
        raise ExpansionError("coincident reference orbits")
    data: dict = {}
    for i in range(n):
        for j in range(i + 1, n):
            if system.m[i] == 0.0 or system.m[j] == 0.0:
                continue
            jet = _pair_jets(system, lambda_star, i, j, space, grid)
            # harmonics supported on (i, j) only
            sel = np.nonzero(np.all(np.delete(hs.k, [i, j], axis=1) == 0, axis=1))[0]
            ki, kj = hs.k[sel, i], hs.k[sel, j]
            for e, vals in jet.items():
                vals = np.broadcast_to(vals, (grid, grid))
                spec = np.fft.fft2(vals) / grid ** 2
                c = spec[np.mod(ki, grid), np.mod(kj, grid)]
                c = np.where(np.all(hs.k[sel] == 0, axis=1), c.real, 2.0 * c)
                dsec = e[1] + e[2] + e[4] + e[5]
                if dalembert:
                    c = np.where(_dalembert_mask(hs.k[sel], dsec), c, 0.0)
                cut = noise * float(np.abs(vals).max())
                c.real[np.abs(c.real) < cut] = 0.0
                c.imag[np.abs(c.imag) < cut] = 0.0
                if not np.any(c):
                    continue
                mono = [0] * dims.nvars
                mono[i], mono[j] = e[0], e[3]
                mono[n + i], mono[n + j] = e[1], e[4]
                mono[2 * n + i], mono[2 * n + j] = e[2], e[5]
                mono = tuple(mono)
                acc = data.setdefault(mono, np.zeros(hs.size, dtype=complex))
                acc[sel] += c
    return PoissonSeries(dims, limits, data)


# ---------------------------------------------------------------------------
# secular diagonalization

def secular_matrix(H: PoissonSeries) -> np.ndarray:
    """Symmetric matrix ``S`` of the angle-free quadratic part ``(xi.S xi + eta.S eta) / 2``."""
    n1, n2 = H.dims.n1, H.dims.n2
    S = np.zeros((n2, n2))
    Sy = np.zeros((n2, n2))
    cross = 0.0
    for mono, arr in H.items():
        if any(mono[:n1]) or sum(mono[n1:]) != 2:
            continue
        c = float(arr[0].real)
        ex, ey = mono[n1:n1 + n2], mono[n1 + n2:]
        xs = [l for l in range(n2) for _ in range(ex[l])]
        ys = [l for l in range(n2) for _ in range(ey[l])]
        if len(xs) == 2:
            a, b = xs
            if a == b:
                S[a, a] += 2 * c
            else:
                S[a, b] += c
                S[b, a] += c
        elif len(ys) == 2:
            a, b = ys
            if a == b:
                Sy[a, a] += 2 * c
            else:
                Sy[a, b] += c
                Sy[b, a] += c
        else:
            cross = max(cross, abs(c))
    scale = max(np.abs(S).max(), 1e-300)
    if np.abs(S - Sy).max() > 1e-10 * scale or cross > 1e-10 * scale:
        raise ExpansionError("quadratic secular part is not of the form (xi.S xi + eta.S eta)/2")
    return S


def diagonalize_secular(S: np.ndarray, gap: float = 1e-12) -> tuple[DiagonalizingMap, np.ndarray]:
    """Orthogonal ``A`` and eigenvalues ``nu`` with ``A.T S A = diag(nu)``.

    Columns are assigned to the coordinate each eigenvector is largest on, and
    signed so that entry is positive.
    """
    S = np.asarray(S, dtype=float)
    if S.shape[0] != S.shape[1] or np.abs(S - S.T).max() > 1e-12 * max(np.abs(S).max(), 1e-300):
        raise ExpansionError("secular matrix must be symmetric")
    nu, V = np.linalg.eigh(S)
    scale = max(np.abs(nu).max(), 1e-300)
    if np.any(np.abs(nu) < gap * scale) or not (np.all(nu > 0) or np.all(nu < 0)):
        raise ExpansionError(f"secular frequencies must be nonzero and of one sign, got {nu}")
    if np.any(np.diff(np.sort(nu)) < gap * scale):
        raise ExpansionError(f"degenerate secular frequencies {nu}")
    rows, cols = linear_sum_assignment(-np.abs(V).round(12))
    order = cols[np.argsort(rows)]
    V = V[:, order]
    nu = nu[order]
    signs = np.sign(np.diag(V))
    signs[signs == 0] = 1.0
    V = V * signs
    return DiagonalizingMap(V), nu


def _poly_linear_substitution(A, a_exp, b_exp):
    """Expand ``prod (A x)_i^a_i (A y)_i^b_i`` as ``{(ex, ey): coeff}``."""
    n = A.shape[0]
    poly = {((0,) * n, (0,) * n): 1.0}
    for side, exps in ((0, a_exp), (1, b_exp)):
        for i, p in enumerate(exps):
            for _ in range(p):
                new: dict = {}
                for (ex, ey), v in poly.items():
                    for l in range(n):
                        if A[i, l] == 0.0:
                            continue
                        e = list(ex if side == 0 else ey)
                        e[l] += 1
                        key = (tuple(e), ey) if side == 0 else (ex, tuple(e))
                        new[key] = new.get(key, 0.0) + v * A[i, l]
                poly = new
    return poly


def substitute_secular(H: PoissonSeries, diag: DiagonalizingMap) -> PoissonSeries:
    """Rewrite ``H(L, lambda, xi, eta)`` in ``(x, y)`` with ``xi = A x`` and ``eta = A y``."""
    n1, n2 = H.dims.n1, H.dims.n2
    data: dict = {}
    for mono, arr in H.items():
        dp, a, b = mono[:n1], mono[n1:n1 + n2], mono[n1 + n2:]
        for (ex, ey), v in _poly_linear_substitution(diag.A, a, b).items():
            key = tuple(dp) + ex + ey
            if key in data:
                data[key] = data[key] + v * arr
            else:
                data[key] = v * arr
    out = {}
    for mono, arr in data.items():
        scale = float(np.abs(arr).max())
        arr = arr.copy()
        arr[np.abs(arr) < 1e-15 * scale] = 0
        out[mono] = arr
    return PoissonSeries(H.dims, H.limits, out)


# ---------------------------------------------------------------------------
# reference actions

def average_semimajor(system: BodySystem, t_span: float = 2.0 ** 16, dt: float = 0.04,
                      sample_every: float = 1.0) -> np.ndarray:
    """Time average of the osculating semi-major axes over ``t_span`` years."""
    traj = integrate(system, initial_state(system), t_span, IntegratorConfig(dt=dt, sample_every=sample_every))
    el = cartesian_to_elements(traj.state(), system.mu, system.beta)
    return el.a.mean(axis=0)


def lambda_star_from_semimajor(system: BodySystem, a_star) -> np.ndarray:
    return system.beta * np.sqrt(system.mu * np.asarray(a_star, dtype=float))


# ---------------------------------------------------------------------------
# assembly

def expand(system: BodySystem, lambda_star, cfg: ExpansionConfig) -> InitialHamiltonian:
    """Build the expanded and diagonalized Hamiltonian around ``lambda_star``."""
    lambda_star = np.asarray(lambda_star, dtype=float)
    n = system.n
    dims = Dimensions(n, n)
    limits = cfg.limits
    kep = kepler_part(system, lambda_star, cfg.kepler_order)
    pert = disturbing_expansion(system, lambda_star, limits, grid=cfg.grid)
    constant = float(kep[0].sum()) + pert.constant_term()
    zero = (0,) * dims.nvars
    data = {m: a.copy() for m, a in pert.items()}
    if zero in data:
        data[zero][0] = 0.0
    pert = PoissonSeries(dims, limits, data)
    H_poincare = _kepler_series(dims, limits, kep, 1) + pert
    kepler_terms = [_kepler_series(dims, TruncationLimits(d, 2 * d, 0), kep[:d + 1], d)
                    for d in range(2, cfg.kepler_order + 1)]
    if n and any(system.m):
        S = secular_matrix(H_poincare)
        diag, nu = diagonalize_secular(S)
    else:
        diag, nu = DiagonalizingMap.identity(n), np.zeros(n)
    H = substitute_secular(H_poincare, diag)
    return InitialHamiltonian(system, lambda_star, limits, H, H_poincare, constant,
                              FrequencyPair(kep[1], nu), diag, kepler_terms,
                              S if n and any(system.m) else np.zeros((n, n)))


def evaluate_cartesian(system: BodySystem, lambda_star, L, lam, xi, eta) -> float:
    """Direct value of the Hamiltonian at the Poincare point ``(Lambda* + L, lambda, xi, eta)``."""
    from .dynamics import hamiltonian, poincare_to_cartesian
    st = poincare_to_cartesian(np.asarray(lambda_star) + L, lam, xi, eta, system.mu, system.beta)
    return float(hamiltonian(system, st))


# ---------------------------------------------------------------------------
# configuration

PROFILES = {
    "sjsu-planar": {
        "limits.max_j1": "3", "limits.max_l": "8", "limits.max_trig": "18",
        "expansion.kepler_order": "4", "expansion.grid": "128",
        "normalize.K": "2", "normalize.R": "9",
        "normalize.alpha": "1e-4", "normalize.beta": "1e-6",
        "lambda_star.window": "65536", "integrator.dt": "0.04",
        "integration.t_span": "16777216", "integration.sample_every": "1",
    },
    "sjsu-desk": {
        "limits.max_j1": "2", "limits.max_l": "4", "limits.max_trig": "10",
        "expansion.kepler_order": "2", "expansion.grid": "64",
        "normalize.K": "2", "normalize.R": "5",
        "normalize.alpha": "1e-4", "normalize.beta": "1e-6",
        "lambda_star.window": "65536", "integrator.dt": "0.04",
        "integration.t_span": "1048576", "integration.sample_every": "1",
    },
}


@dataclass
class RunConfig:
    """Flat key-value configuration.

    Planet keys are ``planet.<j>.mass``, ``planet.<j>.a``, ``planet.<j>.M``,
    ``planet.<j>.e`` and ``planet.<j>.varpi`` (``j`` from 1); the central mass is
    ``star.mass`` and the gravitational constant ``units.G``.  Optional
    ``lambda_star.<j>`` fixes the reference actions instead of averaging.
    """
    values: dict

    def get(self, key, default=None):
        return self.values.get(key, default)

    def float(self, key, default=None) -> float:
        v = self.values.get(key)
        return float(default) if v is None else float(v)

    def int(self, key, default=None) -> int:
        v = self.values.get(key)
        return int(default) if v is None else int(float(v))

    @property
    def limits(self) -> TruncationLimits:
        return TruncationLimits(self.int("limits.max_j1"), self.int("limits.max_l"), self.int("limits.max_trig"))

    @property
    def expansion(self) -> ExpansionConfig:
        return ExpansionConfig(self.limits, self.int("expansion.kepler_order", 4), self.int("expansion.grid", 128))

    def system(self) -> BodySystem:
        if "star.mass" not in self.values:
            return sjsu_system()
        js = sorted({int(k.split(".")[1]) for k in self.values if k.startswith("planet.")})
        m = [self.float(f"planet.{j}.mass") for j in js]
        el = Elements([self.float(f"planet.{j}.a") for j in js], [self.float(f"planet.{j}.M") for j in js],
                      [self.float(f"planet.{j}.e") for j in js], [self.float(f"planet.{j}.varpi") for j in js])
        names = tuple(self.get(f"planet.{j}.name", f"planet{j}") for j in js)
        return BodySystem(self.float("star.mass"), m, el, self.float("units.G", 1.0), names)

    def lambda_star(self, system: BodySystem) -> np.ndarray:
        given = [self.get(f"lambda_star.{j + 1}") for j in range(system.n)]
        if all(v is not None for v in given):
            return np.array([float(v) for v in given])
        a = average_semimajor(system, self.float("lambda_star.window", 65536), self.float("integrator.dt", 0.04))
        return lambda_star_from_semimajor(system, a)


def sjsu_config_values() -> dict:
    s = sjsu_system()
    out = {"star.mass": repr(s.m0), "units.G": "1"}
    for j in range(s.n):
        p = f"planet.{j + 1}."
        out[p + "name"] = s.names[j]
        out[p + "mass"] = repr(float(s.m[j]))
        out[p + "a"] = repr(float(s.elements.a[j]))
        out[p + "M"] = repr(float(s.elements.M[j]))
        out[p + "e"] = repr(float(s.elements.e[j]))
        out[p + "varpi"] = repr(float(s.elements.varpi[j]))
    return out


def load_config(path=None, profile: str = "sjsu-desk", overrides: dict | None = None) -> RunConfig:
    """Read ``key = value`` lines (``#`` comments) on top of a named profile."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values = dict(PROFILES[profile])
    values.update(sjsu_config_values())
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                           inline_comment_prefixes=("#",))
        parser.optionxform = str
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read())
        user = dict(parser["run"])
        if any(k.startswith("planet.") for k in user):
            # a user planet list replaces the default one
            values = {k: v for k, v in values.items() if not k.startswith("planet.")}
        values.update(user)
    values.update(overrides or {})
    return RunConfig(values)


def write_config(values: dict, path):
    with open(path, "w") as fh:
        for k in sorted(values):
            fh.write(f"{k} = {values[k]}\n")
