"""Frequency analysis of quasi-periodic complex signals.

A signal ``f(t)`` sampled on a uniform grid is written as
``sum_j c_j exp(i zeta_j t)``.  Frequencies are found one at a time as
maximizers of ``|<f, exp(i zeta t)>|`` under a Hanning-weighted inner product;
after each new frequency all amplitudes are re-fitted by solving the Gram
system of the exponentials found so far, and the fit is subtracted.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

AMPLITUDE_FLOOR = 1e-12
PAD = 8


@dataclass
class Signal:
    """Complex samples ``samples[i]`` taken at ``t0 + i * dt_sample``."""
    samples: np.ndarray
    dt_sample: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("a signal needs at least two samples")
        if not self.dt_sample > 0:
            raise ValueError("dt_sample must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_sample * np.arange(self.samples.size)

    @property
    def span(self) -> float:
        return self.dt_sample * (self.samples.size - 1)


@dataclass
class SpectrumComponent:
    zeta: float
    c: complex
    k: tuple | None = None
    residual: float | None = None
    unresolved: bool = False

    @property
    def amplitude(self) -> float:
        return abs(self.c)


class _Window:
    """Weighted inner products ``<f, g> = sum w f conj(g) / sum w`` on the sample grid."""

    def __init__(self, signal: Signal):
        n = signal.samples.size
        self.tau = signal.dt_sample * np.arange(n)
        half = 0.5 * signal.span
        w = 1.0 + np.cos(np.pi * (self.tau - half) / half)
        # trapezoid weights; the window vanishes at both ends
        w[0] *= 0.5
        w[-1] *= 0.5
        self.w = w / w.sum()
        self.t0 = signal.t0
        self.dt = signal.dt_sample

    def exp(self, zeta):
        return np.exp(1j * zeta * (self.t0 + self.tau))

    def project(self, f, zeta):
        """``A(zeta) = <f, e^{i zeta t}>`` and its first derivative in ``zeta``."""
        wf = self.w * f * np.conj(self.exp(zeta))
        t = self.t0 + self.tau
        return wf.sum(), (-1j * t * wf).sum()

    def inner_exp(self, za, zb) -> complex:
        """``<e_b, e_a>`` for ``e_z = exp(i z t)``."""
        return (self.w * np.exp(1j * (zb - za) * (self.t0 + self.tau))).sum()

    def gram(self, zetas):
        """``G[a, b] = <e_b, e_a>``."""
        n = len(zetas)
        G = np.empty((n, n), dtype=complex)
        for a in range(n):
            G[a, a] = 1.0
            for b in range(a + 1, n):
                G[a, b] = self.inner_exp(zetas[a], zetas[b])
                G[b, a] = np.conj(G[a, b])
        return G


def _coarse_peak(win: _Window, f) -> tuple[float, float]:
    """Frequency of the largest bin of the padded windowed FFT and the bin width."""
    n = f.size
    m = PAD * (1 << int(np.ceil(np.log2(n))))
    spec = np.fft.fft(win.w * f, m)
    i = int(np.argmax(np.abs(spec)))
    zeta = 2 * np.pi * np.fft.fftfreq(m, d=win.dt)[i]
    return float(zeta), 2 * np.pi / (m * win.dt)


def _refine(win: _Window, f, zeta0: float, width: float, tol: float) -> float:
    """Root of ``d|A|^2/dzeta`` bracketed around the coarse peak."""
    def slope(z):
        a, da = win.project(f, z)
        return 2.0 * (da * np.conj(a)).real

    lo, hi = zeta0 - width, zeta0 + width
    s_lo, s_hi = slope(lo), slope(hi)
    grow = 0
    while s_lo * s_hi > 0 and grow < 4:
        width *= 2
        lo, hi = zeta0 - width, zeta0 + width
        s_lo, s_hi = slope(lo), slope(hi)
        grow += 1
    if s_lo * s_hi > 0:
        return zeta0
    return brentq(slope, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200)


def fit_amplitudes(signal: Signal, zetas) -> np.ndarray:
    """Least-squares amplitudes of the given frequencies under the weighted inner product."""
    win = _Window(signal)
    zetas = list(zetas)
    b = np.array([win.project(signal.samples, z)[0] for z in zetas])
    return np.linalg.solve(win.gram(zetas), b)


def synthesize(t, components) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape, dtype=complex)
    for comp in components:
        out += comp.c * np.exp(1j * comp.zeta * t)
    return out


def _polish(win: _Window, f, t, zetas, flags, tol, sweeps):
    """Re-refine every frequency against the signal minus all the other components.

    A single extraction pass leaves each frequency biased by the leakage of the
    components still present at that time; Gauss-Seidel sweeps remove it.
    """
    zetas = list(zetas)
    b = np.array([win.project(f, z)[0] for z in zetas])
    amps = np.linalg.solve(win.gram(zetas), b)
    for _ in range(sweeps):
        resid = f - sum(a * np.exp(1j * z * t) for a, z in zip(amps, zetas))
        moved = 0.0
        for j, z in enumerate(zetas):
            if flags[j]:
                continue
            r = resid + amps[j] * np.exp(1j * z * t)
            znew = _refine(win, r, z, 0.25 * np.pi / (win.dt * t.size), tol)
            amps[j] = win.project(r, znew)[0]
            resid = r - amps[j] * np.exp(1j * znew * t)
            moved = max(moved, abs(znew - z))
            zetas[j] = znew
        b = np.array([win.project(f, z)[0] for z in zetas])
        amps = np.linalg.solve(win.gram(zetas), b)
        if moved <= tol:
            break
    return zetas, amps


def decompose(signal: Signal, n_components: int, floor: float = AMPLITUDE_FLOOR,
              tol: float = 1e-13, sweeps: int = 3) -> list[SpectrumComponent]:
    """Extract up to ``n_components`` exponentials, stopping when an amplitude drops below ``floor``.

    Components closer than ``2 pi / T`` to an earlier one are flagged ``unresolved``.
    After extraction, up to ``sweeps`` passes re-refine each frequency with the
    other components removed (``sweeps=0`` keeps the single-pass values).
    """
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    win = _Window(signal)
    f = signal.samples
    t = signal.times
    if not np.any(f):
        return []
    zetas: list[float] = []
    flags: list[bool] = []
    amps = np.zeros(0, dtype=complex)
    G = np.zeros((0, 0), dtype=complex)
    b = np.zeros(0, dtype=complex)
    resid = f.copy()
    resolution = 2 * np.pi / signal.span
    for _ in range(n_components):
        z0, width = _coarse_peak(win, resid)
        z = _refine(win, resid, z0, width, tol)
        n = len(zetas)
        G1 = np.empty((n + 1, n + 1), dtype=complex)
        G1[:n, :n] = G
        G1[n, n] = 1.0
        for a in range(n):
            G1[a, n] = win.inner_exp(zetas[a], z)
            G1[n, a] = np.conj(G1[a, n])
        b1 = np.append(b, win.project(f, z)[0])
        try:
            c = np.linalg.solve(G1, b1)
        except np.linalg.LinAlgError:
            break
        if abs(c[-1]) < floor:
            break
        flags.append(any(abs(z - zz) < resolution for zz in zetas))
        zetas.append(z)
        G, b, amps = G1, b1, c
        resid = f - sum(a * np.exp(1j * zz * t) for a, zz in zip(amps, zetas))
    if sweeps and len(zetas) > 1:
        zetas, amps = _polish(win, f, t, zetas, flags, tol, sweeps)
    return [SpectrumComponent(float(z), complex(a), unresolved=fl) for z, a, fl in zip(zetas, amps, flags)]


def reconstruction_error(signal: Signal, components) -> float:
    """``max_t |f(t) - sum c_j exp(i zeta_j t)|``."""
    return float(np.max(np.abs(signal.samples - synthesize(signal.times, components))))


def weighted_residual_energy(signal: Signal, components) -> float:
    win = _Window(signal)
    r = signal.samples - synthesize(signal.times, components)
    return float((win.w * np.abs(r) ** 2).sum())


def _harmonics_sorted(n: int, kmax: int) -> np.ndarray:
    """All integer vectors with ``|k|_1 <= kmax`` ordered by ``|k|_1`` then lexicographically."""
    ks = np.array([k for k in itertools.product(range(-kmax, kmax + 1), repeat=n)
                   if sum(map(abs, k)) <= kmax], dtype=np.int64)
    norm = np.abs(ks).sum(axis=1)
    keys = [ks[:, j] for j in reversed(range(n))] + [norm]
    return ks[np.lexsort(keys)]


def match_harmonics(components, omega, kmax: int = 20, rtol: float = 1e-14) -> list[SpectrumComponent]:
    """Fill ``k`` with the best integer combination of ``omega`` and ``residual = |zeta - k . omega|``.

    Near-ties (within ``rtol`` of the frequency scale) go to the smaller ``|k|``,
    then to the lexicographically smaller ``k``.
    """
    omega = np.asarray(omega, dtype=float)
    ks = _harmonics_sorted(omega.size, kmax)
    kw = ks @ omega
    scale = rtol * max(1.0, float(np.abs(omega).max()))
    out = []
    for comp in components:
        d = np.abs(comp.zeta - kw)
        i = int(np.flatnonzero(d <= d.min() + scale)[0])
        out.append(SpectrumComponent(comp.zeta, comp.c, tuple(int(v) for v in ks[i]), float(d[i]), comp.unresolved))
    return out


def dominant_frequency(signal: Signal, n_components: int = 4, ambiguity: float = 0.1) -> float:
    """Frequency of the largest component; error if the runner-up is within ``ambiguity`` in amplitude."""
    comps = decompose(signal, n_components)
    if not comps:
        raise ValueError("signal has no component above the amplitude floor")
    comps = sorted(comps, key=lambda c: -c.amplitude)
    if len(comps) > 1 and comps[1].amplitude >= (1 - ambiguity) * comps[0].amplitude:
        raise ValueError("dominant component is ambiguous")
    return comps[0].zeta


def fast_frequencies(Lam, lam, dt_sample: float = 1.0, t0: float = 0.0) -> np.ndarray:
    """Dominant frequency of ``Lambda_l exp(i lambda_l)`` for each column ``l``."""
    Lam, lam = np.atleast_2d(Lam), np.atleast_2d(lam)
    return np.array([dominant_frequency(Signal(Lam[:, l] * np.exp(1j * lam[:, l]), dt_sample, t0))
                     for l in range(Lam.shape[1])])


def inversions(components) -> int:
    """Number of pairs extracted out of decreasing amplitude order."""
    a = [c.amplitude for c in components]
    return sum(1 for i in range(len(a)) for j in range(i + 1, len(a)) if a[j] > a[i])


def secular_lines(components, band: float = 1e-3, floor: float = 0.0) -> list[SpectrumComponent]:
    """Components with ``|zeta| < band`` and amplitude at least ``floor``, largest first."""
    lines = [c for c in components if abs(c.zeta) < band and c.amplitude >= floor]
    return sorted(lines, key=lambda c: -c.amplitude)


def write_table_csv(components, path):
    """Rows ``j, zeta, k, residual, |c|`` with ``k`` written as space-separated integers."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "zeta", "k", "residual", "abs_c"])
        for j, comp in enumerate(components):
            k = "" if comp.k is None else " ".join(str(v) for v in comp.k)
            res = "" if comp.residual is None else f"{comp.residual:.6e}"
            w.writerow([j, f"{comp.zeta:.17e}", k, res, f"{comp.amplitude:.6e}"])


def read_table_csv(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            rows.append({"j": int(row["j"]), "zeta": float(row["zeta"]),
                         "k": tuple(int(v) for v in row["k"].split()) if row["k"] else None,
                         "residual": float(row["residual"]) if row["residual"] else None,
                         "abs_c": float(row["abs_c"])})
    return rows
