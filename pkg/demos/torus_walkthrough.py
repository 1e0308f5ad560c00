"""Build a small elliptic-torus normal form for Sun-Jupiter-Saturn-Uranus and fly on it.

Runs in about a minute: trig degree 6, two normalization steps.  The desk
and full-scale runs go through the ``elltorus`` command instead (see the README).
"""
import numpy as np

from elltorus.dynamics import IntegratorConfig, cartesian_to_elements, integrate, sjsu_system
from elltorus.expansion import ExpansionConfig, expand, lambda_star_from_semimajor
from elltorus.normalizer import NonResonanceConfig, initial_state, normalize
from elltorus.orbit import TransformChain, flow_on_torus, torus_initial_condition
from elltorus.series import TruncationLimits

system = sjsu_system()
lam_star = lambda_star_from_semimajor(system, system.elements.a)
ih = expand(system, lam_star, ExpansionConfig(TruncationLimits(2, 4, 6), kepler_order=2, grid=32))
print(f"{len(ih.H)} terms; mean motions {ih.mean_motions}; secular frequencies {ih.frequencies0.Omega}")

state = normalize(initial_state(ih.H, ih.frequencies0, 2, ih.constant), 2,
                  NonResonanceConfig(K=2), lambda s, _: print(f"step {s.r}", s.norms[-1]))
chain = TransformChain.build(ih, state)

ic = torus_initial_condition(chain)
el = cartesian_to_elements(ic, system.mu, system.beta)
print("torus initial elements: a =", el.a, "e =", el.e)

# the semi-analytic orbit is a rigid rotation on the torus; at trig degree 6 its frequencies are
# only good to ~1e-3, so the two curves separate by a few hundredths of an AU per century
t = np.arange(0.0, 201.0, 20.0)
semi = flow_on_torus(chain, np.zeros(system.n), t)
num = integrate(system, ic, t[-1], IntegratorConfig(dt=0.04, sample_every=20.0))
dev = np.linalg.norm(semi.r - num.r, axis=-1)
for ti, d in zip(t, dev):
    print(f"t = {ti:5.0f} yr   |r_semi - r_num| = " + "  ".join(f"{v:.2e}" for v in d))
