import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elltorus.dynamics import (BodySystem, CartesianState, DomainError, Elements, IntegratorConfig,
                               angular_momentum, cartesian_to_elements, cartesian_to_poincare,
                               elements_to_cartesian, equations_of_motion, hamiltonian, initial_state, integrate,
                               integrate_reference, poincare_to_cartesian, poincare_to_elements, poincare_variables,
                               solve_kepler, sjsu_system, step_map, trajectory_poincare)

SJSU = sjsu_system()


def _angle_diff(a, b):
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


@given(st.floats(-20.0, 20.0), st.floats(0.0, 0.95))
def test_kepler_equation_residual(M, e):
    E = solve_kepler(M, e)
    assert _angle_diff(E - e * math.sin(E), M) <= 1e-14


def test_kepler_circular_and_domain():
    M = np.linspace(-3, 3, 7)
    assert np.allclose(solve_kepler(M, 0.0), M, atol=0, rtol=0)
    with pytest.raises(DomainError):
        solve_kepler(0.3, 1.0)


@settings(max_examples=50)
@given(st.floats(0.5, 30.0), st.floats(0.0, 2 * math.pi), st.floats(0.0, 0.6), st.floats(0.0, 2 * math.pi))
def test_elements_round_trip(a, M, e, w):
    el = Elements([a], [M], [e], [w])
    mu, beta = SJSU.mu[:1], SJSU.beta[:1]
    back = cartesian_to_elements(elements_to_cartesian(el, mu, beta), mu, beta)
    assert back.a[0] == pytest.approx(a, rel=1e-12)
    assert back.e[0] == pytest.approx(e, abs=1e-12)
    if e > 1e-6:
        assert _angle_diff(back.varpi, w)[0] <= 1e-9
    # the mean longitude is well defined even when the perihelion is not
    assert _angle_diff(back.M + back.varpi, M + w)[0] <= 1e-9


def test_poincare_round_trip_sjsu():
    st0 = initial_state(SJSU)
    Lam, lam, xi, eta = cartesian_to_poincare(st0, SJSU.mu, SJSU.beta)
    back = poincare_to_cartesian(Lam, lam, xi, eta, SJSU.mu, SJSU.beta)
    assert np.max(np.abs(back.r - st0.r)) <= 1e-12
    assert np.max(np.abs(back.rtilde - st0.rtilde)) <= 1e-12 * np.abs(st0.rtilde).max()


def test_poincare_of_circular_orbit_and_domain():
    el = Elements([5.2], [1.0], [0.0], [2.0])
    Lam, lam, xi, eta = poincare_variables(el, SJSU.mu[:1], SJSU.beta[:1])
    assert xi[0] == 0.0 and eta[0] == 0.0
    assert lam[0] == pytest.approx(3.0)
    assert Lam[0] == pytest.approx(SJSU.beta[0] * math.sqrt(SJSU.mu[0] * 5.2), rel=1e-15)
    with pytest.raises(DomainError):
        poincare_to_elements(Lam, lam, [math.sqrt(2 * Lam[0])], [0.0], SJSU.mu[:1], SJSU.beta[:1])


def test_small_eccentricity_poincare_scale():
    # xi^2 + eta^2 = 2 Lambda (1 - sqrt(1 - e^2)) ~ Lambda e^2
    el = Elements([9.5], [0.0], [1e-3], [0.4])
    Lam, _, xi, eta = poincare_variables(el, SJSU.mu[1:2], SJSU.beta[1:2])
    assert (xi[0] ** 2 + eta[0] ** 2) / Lam[0] == pytest.approx(1e-6, rel=1e-6)


def test_massless_energy_is_keplerian():
    sysm = SJSU.with_masses(np.full(3, 1e-12))
    st0 = initial_state(sysm)
    kep = -np.sum(sysm.mu * sysm.beta / (2 * sysm.elements.a))
    assert hamiltonian(sysm, st0) == pytest.approx(kep, rel=1e-9)


def test_equations_of_motion_are_hamiltonian():
    st0 = initial_state(SJSU)
    v = st0.as_vector()
    n = SJSU.n
    rhs = equations_of_motion(SJSU)(0.0, v)
    grad = np.zeros_like(v)
    for i in range(v.size):
        h = 1e-6 * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        grad[i] = (hamiltonian(SJSU, CartesianState.from_vector(vp, n))
                   - hamiltonian(SJSU, CartesianState.from_vector(vm, n))) / (2 * h)
    m = 2 * n
    assert np.allclose(rhs[:m], grad[m:], rtol=1e-6, atol=1e-9)
    assert np.allclose(rhs[m:], -grad[:m], rtol=1e-6, atol=1e-9)


def test_single_planet_is_exact_kepler():
    el = Elements([5.2], [0.3], [0.05], [1.0])
    sysm = BodySystem(SJSU.m0, SJSU.m[:1], el)
    period = 2 * math.pi / math.sqrt(sysm.mu[0] / 5.2 ** 3)
    cfg = IntegratorConfig(dt=period / 500, sample_every=period / 5)
    tr = integrate(sysm, initial_state(sysm), period, cfg)
    assert np.max(np.abs(tr.r[-1] - tr.r[0])) <= 1e-11


def test_energy_and_angular_momentum_conserved():
    st0 = initial_state(SJSU)
    tr = integrate(SJSU, st0, 2000.0, IntegratorConfig(dt=0.04, sample_every=10.0))
    E = hamiltonian(SJSU, tr.state())
    assert np.max(np.abs(E / E[0] - 1)) <= 1e-10
    C = angular_momentum(tr.state())
    assert np.max(np.abs(C / C[0] - 1)) <= 1e-12


def test_backward_integration_returns():
    st0 = initial_state(SJSU)
    fwd = integrate(SJSU, st0, 200.0, IntegratorConfig(sample_every=200.0))
    back = integrate(SJSU, fwd.state(-1), -200.0, IntegratorConfig(sample_every=200.0))
    assert back.t[-1] == -200.0
    assert np.max(np.abs(back.r[-1] - st0.r)) <= 1e-10


@pytest.mark.parametrize("scheme", ["SBAB3", "SABA3"])
def test_step_map_is_symplectic(scheme):
    f = step_map(SJSU, IntegratorConfig(dt=0.5, scheme=scheme))
    v = initial_state(SJSU).as_vector()
    m = v.size // 2
    J = np.empty((v.size, v.size))
    for i in range(v.size):
        h = 1e-6 * max(1.0, abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        J[:, i] = (f(vp) - f(vm)) / (2 * h)
    Om = np.block([[np.zeros((m, m)), np.eye(m)], [-np.eye(m), np.zeros((m, m))]])
    # compare in units where positions and momenta are both O(1)
    S = np.diag(np.concatenate([np.ones(m), 1.0 / np.abs(v[m:]).max() * np.ones(m)]))
    Js = S @ J @ np.linalg.inv(S)
    Oms = np.linalg.inv(S).T @ Om @ np.linalg.inv(S)
    assert np.max(np.abs(Js.T @ Oms @ Js - Oms)) <= 1e-8 * np.abs(Oms).max()


def test_agrees_with_reference_integrator():
    st0 = initial_state(SJSU)
    tr = integrate(SJSU, st0, 50.0, IntegratorConfig(dt=0.005, precision="extended", sample_every=5.0))
    ref = integrate_reference(SJSU, st0, tr.t, rtol=2.5e-14, atol=1e-16)
    assert np.max(np.abs(tr.r - ref.r)) <= 1e-9


def test_precision_modes_agree():
    st0 = initial_state(SJSU)
    a = integrate(SJSU, st0, 100.0, IntegratorConfig(precision="standard", sample_every=100.0))
    b = integrate(SJSU, st0, 100.0, IntegratorConfig(precision="extended", sample_every=100.0))
    assert 0 < np.max(np.abs(a.r - b.r)) <= 1e-11


def test_sampling_and_trajectory_variables():
    tr = integrate(SJSU, initial_state(SJSU), 10.0, IntegratorConfig(sample_every=2.0))
    assert np.array_equal(tr.t, [0, 2, 4, 6, 8, 10])
    Lam, lam, xi, eta = trajectory_poincare(SJSU, tr)
    assert Lam.shape == (6, 3)
    assert np.all(np.hypot(xi, eta) / np.sqrt(Lam) < 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="RK4")
    with pytest.raises(ValueError):
        IntegratorConfig(precision="quad")
    with pytest.raises(ValueError):
        IntegratorConfig(dt=0.04, sample_every=0.1).steps_per_sample
    with pytest.raises(ValueError):
        BodySystem(1.0, [2.0], Elements([1.0], [0.0], [0.0], [0.0]))
    with pytest.raises(ValueError):
        BodySystem(1.0, [0.001], Elements([1.0], [0.0], [1.2], [0.0]))
