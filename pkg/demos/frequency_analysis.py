"""Frequency analysis of the secular signals xi_j + i eta_j on a short integration.

Integrates the real planets for 2^14 yr and prints the leading components of each
planet together with the integer combination of fast frequencies they match.
"""
import numpy as np

from elltorus.dynamics import IntegratorConfig, initial_state, integrate, sjsu_system, trajectory_poincare
from elltorus.spectral import Signal, decompose, fast_frequencies, match_harmonics, secular_lines

system = sjsu_system()
traj = integrate(system, initial_state(system), float(1 << 14), IntegratorConfig(dt=0.04, sample_every=1.0))
Lam, lam, xi, eta = trajectory_poincare(system, traj)
omega = fast_frequencies(Lam, lam)
print("fast frequencies (rad/yr):", omega)

for j, name in enumerate(system.names):
    comps = match_harmonics(decompose(Signal(xi[:, j] + 1j * eta[:, j]), 8), omega)
    print(f"\n{name}")
    for c in comps:
        print(f"  zeta = {c.zeta:+.10f}  |c| = {c.amplitude:.3e}  k = {c.k}  residual = {c.residual:.1e}")
    # 2^14 yr cannot separate the secular frequencies, so they merge into few lines here
    print("  secular-band lines:", len(secular_lines(comps, 1e-3)))
