"""Normalization steps towards an elliptic torus.

Each step removes, through five Lie transforms, the angle-dependent terms of
low degree in ``(p, x, y)``:

* ``chi0(q)`` for terms that depend on the fast angles only,
* ``chi1(q, x, y)`` for terms linear in the secular variables,
* ``X2(p, q)`` for angle-dependent terms linear in the actions,
* ``Y2(q, x, y)`` for angle-dependent terms quadratic in the secular variables,
* ``D2(x, y)`` for the angle-free quadratic terms depending on the secular phases.

The Hamiltonian is stored as a single :class:`~elltorus.series.PoissonSeries`
that includes ``omega . p + Omega . J``; the frequencies are read off its
angle-free part after the second transform of each step.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expansion import FrequencyPair
from .series import (AAExpansion, PoissonSeries, from_action_angle, from_bytes, harmonic_set, lie_transform,
                     poisson_bracket, reorder_fourier, to_action_angle, to_bytes)

GENERATORS = ("chi0", "chi1", "X2", "Y2", "D2")


class ResonanceError(ArithmeticError):
    """A small divisor fell below its floor.

    Attributes
    ----------
    family : str
        Which generator needed the divisor.
    k : tuple
        Fast harmonic.
    sigma : tuple
        Secular phase combination ``alpha - beta``.
    divisor : float
    """

    def __init__(self, family, k, sigma, divisor, floor):
        self.family, self.k, self.sigma, self.divisor, self.floor = family, tuple(k), tuple(sigma), divisor, floor
        super().__init__(f"{family}: |k.omega + sigma.Omega| = {abs(divisor):.3e} < {floor:.1e} "
                         f"for k = {self.k}, sigma = {self.sigma}")


@dataclass(frozen=True)
class NonResonanceConfig:
    """Divisor floors ``alpha`` (fast combinations) and ``beta`` (secular only), block size ``K``."""
    alpha: float = 1e-4
    beta: float = 1e-6
    K: int = 2
    lie_rel_tol: float = 1e-16
    lie_max_order: int = 40

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("divisor floors must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def alpha_r(self, r: int) -> float:
        return self.alpha


@dataclass
class NormalizationState:
    """Hamiltonian after ``r`` steps together with everything needed to undo them."""
    r: int
    H: PoissonSeries
    freq: FrequencyPair
    K: int
    gens: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    constant0: float = 0.0

    @property
    def blocks(self):
        return reorder_fourier(self.H, self.K)

    @property
    def constant(self) -> float:
        """Angle-free constant of ``H`` plus the constant left out of the initial expansion."""
        return self.constant0 + self.H.constant_term()

    def normal_part(self) -> PoissonSeries:
        return normal_part(self.H, self.freq)


# ---------------------------------------------------------------------------
# helpers

def normal_part(like: PoissonSeries, freq: FrequencyPair) -> PoissonSeries:
    """``omega . p + sum Omega_l (x_l^2 + y_l^2) / 2`` with the limits of ``like``."""
    Z = PoissonSeries.linear_in_p(like.dims, like.limits, freq.omega)
    if like.dims.n2:
        Z = Z + PoissonSeries.harmonic_oscillators(like.dims, like.limits, freq.Omega)
    return Z


def _block(H: PoissonSeries, j1, j2, kmin, kmax):
    return H.select(j1=j1, j2=j2, kmin=kmin, kmax=kmax)


def norm_without_constant(f: PoissonSeries) -> float:
    zero = (0,) * f.dims.nvars
    c = abs(f.constant_term())
    return f.norm() - c if zero in f.monomials() else f.norm()


def _solve(rhs: PoissonSeries, freq: FrequencyPair, family: str, floor: float, skip=None,
           divisors_out: list | None = None) -> PoissonSeries:
    """Solve ``{chi, Z} + rhs = 0`` term by term in the ``u = x + i y`` basis.

    ``skip(k, sigma)`` marks terms that stay in the Hamiltonian.
    """
    if rhs.is_zero():
        return PoissonSeries.zero(rhs.dims, rhs.limits)
    if rhs.dims.n2 and any(sum(m[rhs.dims.n1:]) for m in rhs.monomials()):
        aa = to_action_angle(rhs)
    else:
        aa = AAExpansion(rhs.dims, rhs.limits, {(m[:rhs.dims.n1], m[rhs.dims.n1:rhs.dims.n1 + rhs.dims.n2],
                                                 m[rhs.dims.n1 + rhs.dims.n2:]): a for m, a in rhs.items()})
    ks = harmonic_set(rhs.dims.n1, rhs.limits.max_trig).k
    out = {}
    for key, arr, div in aa.divisors(freq.omega, freq.Omega):
        _, alpha, beta = key
        sigma = tuple(int(a - b) for a, b in zip(alpha, beta))
        nz = np.nonzero(arr)[0]
        sol = np.zeros_like(arr)
        for i in nz:
            k = tuple(int(v) for v in ks[i])
            if skip is not None and skip(k, sigma):
                continue
            d = div[i]
            if divisors_out is not None:
                divisors_out.append((k, sigma, float(d)))
            if abs(d) < floor:
                raise ResonanceError(family, k, sigma, float(d), floor)
            sol[i] = 1j * arr[i] / d
        if np.any(sol):
            out[key] = sol
    result = AAExpansion(rhs.dims, rhs.limits, out)
    if rhs.dims.n2 and any(sum(k[1]) + sum(k[2]) for k in out):
        return from_action_angle(result)
    data = {tuple(dp) + tuple(a) + tuple(b): v for (dp, a, b), v in out.items()}
    return PoissonSeries(rhs.dims, rhs.limits, data)


def homological_residual(chi: PoissonSeries, rhs: PoissonSeries, freq: FrequencyPair) -> PoissonSeries:
    """``{chi, Z} + rhs``; zero when ``chi`` solves the homological equation."""
    Z = normal_part(rhs, freq)
    return poisson_bracket(chi, Z) + rhs


# ---------------------------------------------------------------------------
# right-hand sides

def rhs_chi0(H, r, K):
    return _block(H, 0, 0, 1, r * K)


def rhs_chi1(H, r, K):
    return _block(H, 0, 1, 0, r * K)


def rhs_X2(H, r, K):
    return _block(H, 1, 0, 1, r * K)


def rhs_Y2(H, r, K):
    return _block(H, 0, 2, 1, r * K)


def rhs_D2(H, freq: FrequencyPair):
    """Angle-free quadratic secular part minus ``Omega . J``; its phase average is kept."""
    f = _block(H, 0, 2, 0, 0)
    if H.dims.n2 == 0:
        return f
    return f - PoissonSeries.harmonic_oscillators(H.dims, H.limits, freq.Omega)


# ---------------------------------------------------------------------------
# the five homological equations

def solve_chi0(H, r, freq, cfg: NonResonanceConfig, divisors_out=None):
    return _solve(rhs_chi0(H, r, cfg.K), freq, "chi0", cfg.alpha_r(r), divisors_out=divisors_out)


def solve_chi1(H, r, freq, cfg: NonResonanceConfig, divisors_out=None):
    rhs = rhs_chi1(H, r, cfg.K)
    # angle-free linear secular terms only need |Omega_j| >= beta
    k0 = rhs.select(kmin=0, kmax=0)
    chi = _solve(rhs - k0, freq, "chi1", cfg.alpha_r(r), divisors_out=divisors_out)
    return chi + _solve(k0, freq, "chi1", cfg.beta, divisors_out=divisors_out)


def solve_X2(H, r, freq, cfg: NonResonanceConfig, divisors_out=None):
    return _solve(rhs_X2(H, r, cfg.K), freq, "X2", cfg.alpha_r(r), divisors_out=divisors_out)


def solve_Y2(H, r, freq, cfg: NonResonanceConfig, divisors_out=None):
    return _solve(rhs_Y2(H, r, cfg.K), freq, "Y2", cfg.alpha_r(r), divisors_out=divisors_out)


def solve_D2(H, freq, cfg: NonResonanceConfig, divisors_out=None):
    rhs = rhs_D2(H, freq)
    return _solve(rhs, freq, "D2", cfg.beta, skip=lambda k, sigma: not any(sigma),
                  divisors_out=divisors_out)


def phase_average(f: PoissonSeries) -> PoissonSeries:
    """Part of an angle-free quadratic secular series that does not depend on the secular phases."""
    if f.dims.n2 == 0 or f.is_zero():
        return f
    aa = to_action_angle(f)
    kept = {key: v for key, v in aa.items() if key[1] == key[2]}
    return from_action_angle(AAExpansion(f.dims, f.limits, kept))


def update_frequencies(freq: FrequencyPair, f10_angle_free: PoissonSeries,
                       f02_averaged: PoissonSeries) -> FrequencyPair:
    """Add the coefficients of ``p_j`` and ``J_l`` to ``omega`` and ``Omega``."""
    n1, n2 = len(freq.omega), len(freq.Omega)
    domega = np.zeros(n1)
    dOmega = np.zeros(n2)
    for mono, arr in f10_angle_free.items():
        if np.any(arr[1:]):
            raise ValueError("frequency correction must be angle-free")
        if sum(mono[n1:]) or sum(mono[:n1]) != 1:
            raise ValueError("action correction must be a linear form in p")
        domega[int(np.argmax(mono[:n1]))] += arr[0].real
    for mono, arr in f02_averaged.items():
        if np.any(arr[1:]) or sum(mono[:n1]):
            raise ValueError("secular correction must be angle-free and independent of p")
        ex, ey = mono[n1:n1 + n2], mono[n1 + n2:]
        if sum(ex) + sum(ey) != 2 or max(max(ex), max(ey)) != 2:
            raise ValueError("secular correction must be a linear form in J")
        l = int(np.argmax(np.add(ex, ey)))
        dOmega[l] += arr[0].real
    # a x^2 + b y^2 averages to (a + b) J; a phase-averaged input has a = b
    return FrequencyPair(freq.omega + domega, freq.Omega + dOmega)


# ---------------------------------------------------------------------------
# one step

def _lie(chi, H, cfg: NonResonanceConfig, terminating: bool):
    if terminating:
        return lie_transform(chi, H, max_order=cfg.lie_max_order)
    return lie_transform(chi, H, max_order=cfg.lie_max_order, rel_tol=cfg.lie_rel_tol)


def normalize_step(state: NormalizationState, cfg: NonResonanceConfig,
                   divisors_out: dict | None = None) -> NormalizationState:
    """Perform step ``state.r + 1`` and return the new state."""
    r = state.r + 1
    H, freq, K = state.H, state.freq, cfg.K
    if r * K > H.limits.max_trig:
        raise ValueError(f"step {r} needs harmonics up to {r * K} > max_trig = {H.limits.max_trig}")
    divs = {name: [] for name in GENERATORS}
    residuals = {}

    rhs = rhs_chi0(H, r, K)
    chi0 = solve_chi0(H, r, freq, cfg, divs["chi0"])
    residuals["chi0"] = _rel_residual(chi0, rhs, freq)
    H = _lie(chi0, H, cfg, True)

    rhs = rhs_chi1(H, r, K)
    chi1 = solve_chi1(H, r, freq, cfg, divs["chi1"])
    residuals["chi1"] = _rel_residual(chi1, rhs, freq)
    H = _lie(chi1, H, cfg, True)

    # every stage-three generator comes from the same Hamiltonian
    rhs_x, rhs_y, rhs_d = rhs_X2(H, r, K), rhs_Y2(H, r, K), rhs_D2(H, freq)
    X2 = solve_X2(H, r, freq, cfg, divs["X2"])
    Y2 = solve_Y2(H, r, freq, cfg, divs["Y2"])
    D2 = solve_D2(H, freq, cfg, divs["D2"])
    residuals["X2"] = _rel_residual(X2, rhs_x, freq)
    residuals["Y2"] = _rel_residual(Y2, rhs_y, freq)
    residuals["D2"] = _rel_residual(D2, rhs_d - phase_average(rhs_d), freq)
    f10 = _block(H, 1, 0, 0, 0) - PoissonSeries.linear_in_p(H.dims, H.limits, freq.omega)
    new_freq = update_frequencies(freq, f10, phase_average(rhs_d))
    H = _lie(X2, H, cfg, False)
    H = _lie(Y2, H, cfg, False)
    H = _lie(D2, H, cfg, False)

    gens = {"chi0": chi0, "chi1": chi1, "X2": X2, "Y2": Y2, "D2": D2}
    norms = {name: g.norm() for name, g in gens.items()}
    if divisors_out is not None:
        divisors_out.update(divs)
    return NormalizationState(r, H, new_freq, K, state.gens + [gens], state.norms + [norms],
                              state.residuals + [residuals], state.constant0)


def _rel_residual(chi, rhs, freq) -> float:
    n = rhs.norm()
    if n == 0:
        return 0.0
    return homological_residual(chi, rhs, freq).norm() / n


def initial_state(H0: PoissonSeries, freq0: FrequencyPair, K: int, constant: float = 0.0) -> NormalizationState:
    return NormalizationState(0, H0, freq0, K, constant0=constant)


def normalize(state: NormalizationState, R: int, cfg: NonResonanceConfig, callback=None) -> NormalizationState:
    """Run steps until ``state.r == R``; ``callback(state, divisors)`` after each step."""
    while state.r < R:
        divs: dict = {}
        state = normalize_step(state, cfg, divs)
        if callback is not None:
            callback(state, divs)
    return state


# ---------------------------------------------------------------------------
# diagnostics

def targeted_remainder(state: NormalizationState) -> dict:
    """Norms of the blocks a completed step aims to remove, relative to ``norm(H)``.

    Keys: ``f00``, ``f01``, ``f10`` (angle-dependent plus the angle-free part
    not absorbed in ``omega``), ``f02`` (angle-dependent) and ``f02_phase``
    (angle-free part depending on the secular phases).
    """
    H, r, K, freq = state.H, state.r, state.K, state.freq
    ref = norm_without_constant(H)
    rhs_d = rhs_D2(H, freq)
    f10_0 = _block(H, 1, 0, 0, 0) - PoissonSeries.linear_in_p(H.dims, H.limits, freq.omega)
    parts = {
        "f00": rhs_chi0(H, r, K).norm(),
        "f01": rhs_chi1(H, r, K).norm(),
        "f10": rhs_X2(H, r, K).norm() + f10_0.norm(),
        "f02": rhs_Y2(H, r, K).norm(),
        "f02_phase": (rhs_d - phase_average(rhs_d)).norm(),
    }
    return {k: v / ref for k, v in parts.items()}


@dataclass
class DivisorReport:
    """Smallest divisor of each condition family with the index that attains it."""
    rK: int
    entries: dict

    def passed(self) -> bool:
        return all(e["pass"] for e in self.entries.values())

    def to_json(self) -> str:
        return json.dumps({"rK": self.rK, "entries": self.entries}, indent=2, sort_keys=True)


def check_nonresonance(freq: FrequencyPair, rK: int, cfg: NonResonanceConfig) -> DivisorReport:
    """Enumerate the divisors of every condition family up to ``|k| <= rK``."""
    omega, Omega = np.asarray(freq.omega), np.asarray(freq.Omega)
    n1, n2 = omega.size, Omega.size
    hs = harmonic_set(n1, max(rK, 0))
    ks = hs.k[1:]
    kw = ks @ omega
    entries = {}

    def record(name, values, labels, floor):
        if len(values) == 0:
            entries[name] = {"min": None, "index": None, "floor": floor, "pass": True}
            return
        i = int(np.argmin(np.abs(values)))
        entries[name] = {"min": float(abs(values[i])), "index": labels[i], "floor": floor,
                         "pass": bool(abs(values[i]) >= floor)}

    alpha = cfg.alpha_r(rK // max(cfg.K, 1))
    record("fast", kw, [list(map(int, k)) for k in ks], alpha)
    vals, labs = [], []
    for j in range(n2):
        for s in (1, -1):
            vals.extend(kw + s * Omega[j])
            labs.extend([{"k": list(map(int, k)), "j": j, "sign": s} for k in ks])
    record("melnikov1", np.array(vals), labs, alpha)
    record("secular", Omega, [{"j": j} for j in range(n2)], cfg.beta)
    vals, labs = [], []
    for i in range(n2):
        for j in range(i, n2):
            for si in (1, -1):
                for sj in (1, -1):
                    if i == j and si != sj:
                        continue
                    vals.extend(kw + si * Omega[i] + sj * Omega[j])
                    labs.extend([{"k": list(map(int, k)), "i": i, "j": j, "signs": [si, sj]} for k in ks])
    record("melnikov2", np.array(vals), labs, alpha)
    vals, labs = [], []
    for i in range(n2):
        for j in range(i, n2):
            for si in (1, -1):
                for sj in (1, -1):
                    if i == j and si != sj:
                        continue
                    vals.append(si * Omega[i] + sj * Omega[j])
                    labs.append({"i": i, "j": j, "signs": [si, sj]})
    record("secular2", np.array(vals), labs, cfg.beta)
    return DivisorReport(rK, entries)


def smallest_fast_divisors(omega, kmax: int, count: int = 10):
    """The ``count`` smallest ``|k . omega|`` over ``0 < |k| <= kmax``."""
    hs = harmonic_set(len(omega), kmax)
    ks = hs.k[1:]
    v = np.abs(ks @ np.asarray(omega))
    order = np.argsort(v)[:count]
    return [(tuple(int(x) for x in ks[i]), float(v[i])) for i in order]


# ---------------------------------------------------------------------------
# persistence

def write_norms_csv(state: NormalizationState, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r"] + list(GENERATORS))
        for r, norms in enumerate(state.norms, start=1):
            w.writerow([r] + [f"{norms[g]:.17e}" for g in GENERATORS])


def read_norms_csv(path) -> list[dict]:
    with open(path) as fh:
        return [{k: (int(v) if k == "r" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_checkpoint(state: NormalizationState, out_dir) -> list:
    """Write the Hamiltonian, the generators of the latest step and a JSON header."""
    d = Path(out_dir) / f"step_{state.r:02d}"
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "H.bin"]
    paths[0].write_bytes(to_bytes(state.H))
    if state.gens:
        for name, g in state.gens[-1].items():
            p = d / f"{name}.bin"
            p.write_bytes(to_bytes(g))
            paths.append(p)
    meta = {"r": state.r, "K": state.K, "omega": state.freq.omega.tolist(), "Omega": state.freq.Omega.tolist(),
            "constant0": state.constant0, "norms": state.norms, "residuals": state.residuals}
    p = d / "state.json"
    p.write_text(json.dumps(meta, indent=2, sort_keys=True))
    paths.append(p)
    return paths


def read_checkpoints(out_dir, r: int) -> NormalizationState:
    """Rebuild the state after step ``r`` from the checkpoints of steps ``1 .. r``."""
    base = Path(out_dir)
    meta = json.loads((base / f"step_{r:02d}" / "state.json").read_text())
    H = from_bytes((base / f"step_{r:02d}" / "H.bin").read_bytes())
    gens = []
    for s in range(1, r + 1):
        d = base / f"step_{s:02d}"
        gens.append({name: from_bytes((d / f"{name}.bin").read_bytes()) for name in GENERATORS})
    return NormalizationState(r, H, FrequencyPair(meta["omega"], meta["Omega"]), meta["K"], gens,
                              meta["norms"], meta["residuals"], meta["constant0"])


def write_divisors_json(divs: dict, path, top: int = 20):
    """Smallest divisors actually used by each generator family."""
    out = {}
    for name, items in divs.items():
        items = sorted(items, key=lambda t: abs(t[2]))[:top]
        out[name] = [{"k": list(k), "sigma": list(s), "divisor": d} for k, s, d in items]
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True))
