"""Command line pipeline: expand, normalize, orbit, integrate, analyze, compare.

Every command reads the flat configuration (a named profile plus an optional
``key = value`` file), works inside ``--out-dir`` and records the files it
wrote in ``manifest.json`` there.

Exit codes: 0 success, 1 input/output or configuration error, 2 resonance failure.
"""
from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import CartesianState, IntegratorConfig, Trajectory, integrate, trajectory_poincare
from .expansion import PROFILES, InitialHamiltonian, expand, load_config, write_config
from .normalizer import (NonResonanceConfig, ResonanceError, check_nonresonance, initial_state, normalize,
                         read_checkpoints, write_checkpoint, write_divisors_json, write_norms_csv)
from .orbit import TransformChain, flow_on_torus, read_orbit_csv, torus_initial_condition, write_orbit_csv
from .spectral import Signal, decompose, fast_frequencies, match_harmonics, secular_lines, write_table_csv

EXIT_IO = 1
EXIT_RESONANCE = 2


class Manifest:
    """``manifest.json`` in the output directory; entries accumulate across commands."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / "manifest.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {"version": __version__,
                                                                                   "outputs": {}, "runs": []}

    def record(self, command, cfg, args, paths, extra=None):
        run = {"command": command, "config": args.config, "profile": args.profile,
               "time": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
               "limits": {k: cfg.get(f"limits.{k}") for k in ("max_j1", "max_l", "max_trig")},
               "K": cfg.get("normalize.K"), "R": _steps(cfg, args)}
        if extra:
            run.update(extra)
        self.data["runs"].append(run)
        out_dir = self.path.parent
        for p in paths:
            self.data["outputs"][str(Path(p).relative_to(out_dir))] = command
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True))


def _steps(cfg, args) -> int:
    return args.steps if getattr(args, "steps", None) is not None else cfg.int("normalize.R")


def _config(args):
    overrides = {}
    if getattr(args, "precision", None):
        overrides["integrator.precision"] = args.precision
    return load_config(args.config, args.profile, overrides)


def _initial(out: Path, cfg) -> InitialHamiltonian:
    if not (out / "H0.bin").exists():
        raise FileNotFoundError(f"{out / 'H0.bin'} missing; run 'expand' first")
    return InitialHamiltonian.read(out, cfg.system())


def _chain(out: Path, cfg, R: int) -> TransformChain:
    ih = _initial(out, cfg)
    if R == 0:
        return TransformChain.build(ih)
    return TransformChain.build(ih, read_checkpoints(out / "normalize", R))


# ---------------------------------------------------------------------------
# commands

def cmd_expand(args, out: Path):
    cfg = _config(args)
    system = cfg.system()
    lam = cfg.lambda_star(system)
    ih = expand(system, lam, cfg.expansion)
    paths = ih.write(out)
    p = out / "config.txt"
    write_config(cfg.values, p)
    Manifest(out).record("expand", cfg, args, paths + [p], {"mu": ih.mu})
    print(f"expanded: {len(ih.H)} terms, n* = {np.array2string(ih.frequencies0.omega, precision=10)}")


def cmd_normalize(args, out: Path):
    cfg = _config(args)
    R = _steps(cfg, args)
    K = cfg.int("normalize.K")
    if R * K > cfg.limits.max_trig:
        raise ValueError(f"R * K = {R * K} exceeds max_trig = {cfg.limits.max_trig}")
    ih = _initial(out, cfg)
    nr = NonResonanceConfig(cfg.float("normalize.alpha"), cfg.float("normalize.beta"), K)
    d = out / "normalize"
    d.mkdir(parents=True, exist_ok=True)
    paths = []

    def step_done(state, divs):
        paths.extend(write_checkpoint(state, d))
        p = d / f"divisors_{state.r:02d}.json"
        write_divisors_json(divs, p)
        q = d / f"nonresonance_{state.r:02d}.json"
        q.write_text(check_nonresonance(state.freq, state.r * K, nr).to_json())
        paths.extend([p, q])
        norms = " ".join(f"{k}={v:.3e}" for k, v in state.norms[-1].items())
        print(f"step {state.r}: {norms}", flush=True)

    state = initial_state(ih.H, ih.frequencies0, K, ih.constant)
    paths.extend(write_checkpoint(state, d))
    state = normalize(state, R, nr, step_done)
    p = d / "norms.csv"
    write_norms_csv(state, p)
    paths.append(p)
    Manifest(out).record("normalize", cfg, args, paths,
                         {"omega": state.freq.omega.tolist(), "Omega": state.freq.Omega.tolist()})


def cmd_orbit(args, out: Path):
    cfg = _config(args)
    R = _steps(cfg, args)
    chain = _chain(out, cfg, R)
    every = cfg.float("orbit.sample_every", 1.0)
    n = int(round(cfg.float("orbit.span", 1024) / every)) + 1
    t = every * np.arange(n)
    states = flow_on_torus(chain, np.zeros(chain.system.n), t)
    p = out / f"orbit_R{R}.csv"
    write_orbit_csv(p, t, states, chain.system)
    q = _write_ic(out, chain, R)
    Manifest(out).record("orbit", cfg, args, [p, q], {"omega": chain.omega.tolist()})
    print(f"wrote {p.name} ({n} samples)")


def _write_ic(out: Path, chain: TransformChain, R: int) -> Path:
    ic = torus_initial_condition(chain)
    q = out / f"ic_R{R}.json"
    q.write_text(json.dumps({"r": ic.r.tolist(), "rtilde": ic.rtilde.tolist(), "omega": chain.omega.tolist()},
                            indent=2))
    return q


def cmd_integrate(args, out: Path):
    cfg = _config(args)
    R = _steps(cfg, args)
    icp = out / f"ic_R{R}.json"
    if icp.exists():
        meta = json.loads(icp.read_text())
        ic = CartesianState(meta["r"], meta["rtilde"])
        paths = []
    else:
        chain = _chain(out, cfg, R)
        icp = _write_ic(out, chain, R)
        ic = CartesianState(*(json.loads(icp.read_text())[k] for k in ("r", "rtilde")))
        paths = [icp]
    icfg = IntegratorConfig(dt=cfg.float("integrator.dt"), scheme=cfg.get("integrator.scheme", "SBAB3"),
                            precision=cfg.get("integrator.precision", "extended"),
                            sample_every=cfg.float("integration.sample_every", 1.0))
    traj = integrate(cfg.system(), ic, cfg.float("integration.t_span"), icfg)
    p = out / f"traj_R{R}.npz"
    np.savez(p, t=traj.t, r=traj.r, rtilde=traj.rtilde)
    paths.append(p)
    Manifest(out).record("integrate", cfg, args, paths, {"dt": icfg.dt, "precision": icfg.precision})
    print(f"wrote {p.name} ({traj.t.size} samples)")


def _load_traj(path) -> Trajectory:
    z = np.load(path)
    return Trajectory(z["t"], z["r"], z["rtilde"])


def _spectra(cfg, system, traj, ncomp):
    """Matched spectra of ``xi_j + i eta_j`` and the fast frequencies measured on the same run."""
    Lam, lam, xi, eta = trajectory_poincare(system, traj)
    dt, t0 = float(traj.t[1] - traj.t[0]), float(traj.t[0])
    omega = fast_frequencies(Lam, lam, dt, t0)
    out = []
    for j in range(system.n):
        comps = decompose(Signal(xi[:, j] + 1j * eta[:, j], dt, t0), ncomp)
        out.append(match_harmonics(comps, omega, cfg.int("analyze.kmax", 20)))
    return out, omega


def cmd_analyze(args, out: Path):
    """Spectra of ``xi_j + i eta_j`` for the R-step and 0-step runs and the secular comparison."""
    cfg = _config(args)
    R = _steps(cfg, args)
    system = cfg.system()
    ncomp = cfg.int("analyze.components", 25)
    band = cfg.float("analyze.band", 1e-3)
    report, paths = {"band": band, "runs": {}, "omega_inf": {}}, []
    for r in sorted({R, 0}):
        p = out / f"traj_R{r}.npz"
        if not p.exists():
            continue
        spectra, omega = _spectra(cfg, system, _load_traj(p), ncomp)
        report["omega_inf"][str(r)] = omega.tolist()
        run = []
        for j, comps in enumerate(spectra):
            q = out / f"spectrum_R{r}_planet{j + 1}.csv"
            write_table_csv(comps, q)
            paths.append(q)
            lines = secular_lines(comps, band)
            run.append({"secular": [{"zeta": c.zeta, "abs_c": c.amplitude} for c in lines]})
        report["runs"][str(r)] = run
    if "0" in report["runs"] and str(R) in report["runs"] and R:
        drops = []
        for j in range(system.n):
            a0 = max((c["abs_c"] for c in report["runs"]["0"][j]["secular"]), default=0.0)
            aR = max((c["abs_c"] for c in report["runs"][str(R)][j]["secular"]), default=0.0)
            drops.append(a0 / aR if aR else float("inf"))
        report["secular_drop"] = drops
        print("secular amplitude drop per planet: " + ", ".join(f"{d:.3g}" for d in drops))
    orbit = out / f"orbit_R{R}.csv"
    if orbit.exists():
        # the semi-analytic orbit is quasi-periodic with the torus frequencies by construction
        t, cols = read_orbit_csv(orbit)
        omega = np.array(json.loads((out / f"ic_R{R}.json").read_text())["omega"])
        dt = float(t[1] - t[0])
        worst = 0.0
        for j in range(system.n):
            sig = Signal(cols[f"xi_{j + 1}"] + 1j * cols[f"eta_{j + 1}"], dt, float(t[0]))
            comps = match_harmonics(decompose(sig, ncomp), omega, cfg.int("analyze.kmax", 20))
            q = out / f"spectrum_orbit_R{R}_planet{j + 1}.csv"
            write_table_csv(comps, q)
            paths.append(q)
            worst = max([worst] + [c.residual for c in comps])
        report["orbit_max_residual"] = worst
    q = out / "analyze.json"
    q.write_text(json.dumps(report, indent=2))
    paths.append(q)
    Manifest(out).record("analyze", cfg, args, paths)


def cmd_compare(args, out: Path):
    """Largest position difference between the semi-analytic orbit and the numerical run."""
    cfg = _config(args)
    R = _steps(cfg, args)
    t_orb, cols = read_orbit_csv(out / f"orbit_R{R}.csv")
    traj = _load_traj(out / f"traj_R{R}.npz")
    n = traj.r.shape[1]
    common = min(t_orb.size, traj.t.size)
    if not np.allclose(t_orb[:common], traj.t[:common]):
        raise ValueError("orbit and trajectory samples are on different time grids")
    dev = np.zeros((common, n))
    for j in range(n):
        dx = cols[f"x_{j + 1}"][:common] - traj.r[:common, j, 0]
        dy = cols[f"y_{j + 1}"][:common] - traj.r[:common, j, 1]
        dev[:, j] = np.hypot(dx, dy)
    rep = {"R": R, "samples": int(common), "t_max": float(t_orb[common - 1]),
           "max_position_deviation": dev.max(axis=0).tolist()}
    p = out / f"compare_R{R}.json"
    p.write_text(json.dumps(rep, indent=2))
    Manifest(out).record("compare", cfg, args, [p])
    print("max position deviation per planet (AU): " + ", ".join(f"{v:.3e}" for v in rep["max_position_deviation"]))


COMMANDS = {"expand": cmd_expand, "normalize": cmd_normalize, "orbit": cmd_orbit,
            "integrate": cmd_integrate, "analyze": cmd_analyze, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="elltorus", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else name)
        p.add_argument("--config", help="key = value file applied on top of the profile")
        p.add_argument("--profile", default="sjsu-desk", choices=sorted(PROFILES))
        p.add_argument("--out-dir", default="run", help="artifact directory (default: run)")
        p.add_argument("--steps", type=int, help="number of normalization steps R")
        p.add_argument("--precision", choices=("standard", "extended"), help="integrator arithmetic")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except ResonanceError as exc:
        print(f"resonance: {exc}", file=sys.stderr)
        return EXIT_RESONANCE
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
