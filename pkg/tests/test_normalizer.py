import math

import numpy as np
import pytest

from elltorus.expansion import FrequencyPair
from elltorus.normalizer import (NonResonanceConfig, NormalizationState, ResonanceError, check_nonresonance,
                                 homological_residual, initial_state, normal_part, normalize, normalize_step,
                                 phase_average, read_checkpoints, read_norms_csv, rhs_D2, smallest_fast_divisors,
                                 solve_chi0, solve_chi1, solve_D2, solve_X2, solve_Y2, targeted_remainder,
                                 update_frequencies, write_checkpoint, write_norms_csv)
from elltorus.series import (Dimensions, PoissonSeries, TermKey, TruncationLimits, in_class, in_union_class,
                             lie_transform, poisson_bracket)

from conftest import random_series

D11 = Dimensions(1, 1)
D32 = Dimensions(3, 2)
LIM = TruncationLimits(2, 4, 6)
OPEN = TruncationLimits(6, 12, 10)  # no Lie term below reaches these limits
FREQ32 = FrequencyPair([1.0, math.sqrt(2.0), math.sqrt(5.0) / 3], [0.031, -0.017])
CFG = NonResonanceConfig(alpha=1e-6, beta=1e-6, K=1)


def T(dims, dp, dxy, k, parity="c", c=1.0, limits=LIM):
    return PoissonSeries.term(dims, limits, dp, dxy, k, parity, c)


def with_normal_part(f, freq):
    return normal_part(f, freq) + f


def coef(f, dp, dxy, k, parity):
    return f.coefficient(TermKey(tuple(dp), tuple(dxy), tuple(k), parity))


# -- hand-solvable right-hand sides ------------------------------------------

def test_chi0_of_single_harmonic():
    freq = FrequencyPair([0.7], [0.05])
    c, d = 0.3, -0.2
    f = T(D11, (0,), (0, 0), (2,), "c", c) + T(D11, (0,), (0, 0), (2,), "s", d)
    chi = solve_chi0(with_normal_part(f, freq), 2, freq, NonResonanceConfig(K=1))
    assert coef(chi, (0,), (0, 0), (2,), "s") == pytest.approx(-c / 1.4, rel=1e-14)
    assert coef(chi, (0,), (0, 0), (2,), "c") == pytest.approx(d / 1.4, rel=1e-14)


def test_zero_rhs_gives_zero_generators():
    freq = FrequencyPair([0.7], [0.05])
    H = normal_part(PoissonSeries.zero(D11, LIM), freq)
    cfg = NonResonanceConfig(K=1)
    for solve in (solve_chi0, solve_chi1, solve_X2, solve_Y2):
        assert solve(H, 1, freq, cfg).is_zero()
    assert solve_D2(H, freq, cfg).is_zero()


def test_chi1_of_single_term():
    # sqrt(2J) c cos(q + phi) = c (x cos q - y sin q)
    freq = FrequencyPair([0.7], [0.05])
    c = 0.4
    f = T(D11, (0,), (1, 0), (1,), "c", c) + T(D11, (0,), (0, 1), (1,), "s", -c)
    chi = solve_chi1(with_normal_part(f, freq), 1, freq, NonResonanceConfig(K=1))
    # expected -c sqrt(2J) sin(q + phi) / (omega + Omega) = -c (x sin q + y cos q) / (omega + Omega)
    div = 0.75
    assert coef(chi, (0,), (1, 0), (1,), "s") == pytest.approx(-c / div, rel=1e-13)
    assert coef(chi, (0,), (0, 1), (1,), "c") == pytest.approx(-c / div, rel=1e-13)
    assert len(list(chi.terms())) == 2


def test_X2_of_single_term():
    freq = FrequencyPair([0.7], [0.05])
    f = T(D11, (1,), (0, 0), (3,), "c", 0.25)
    X2 = solve_X2(with_normal_part(f, freq), 3, freq, NonResonanceConfig(K=1))
    assert coef(X2, (1,), (0, 0), (3,), "s") == pytest.approx(-0.25 / 2.1, rel=1e-14)


def test_Y2_of_difference_phase():
    dims = Dimensions(1, 2)
    freq = FrequencyPair([0.7], [0.05, -0.02])
    c = 0.3
    # 2 sqrt(J1 J2) cos(q + phi1 - phi2) = Re(u1 conj(u2) e^{iq})
    f = (T(dims, (0,), (1, 1, 0, 0), (1,), "c", c) + T(dims, (0,), (0, 0, 1, 1), (1,), "c", c)
         + T(dims, (0,), (0, 1, 1, 0), (1,), "s", -c) + T(dims, (0,), (1, 0, 0, 1), (1,), "s", c))
    Y2 = solve_Y2(with_normal_part(f, freq), 1, freq, NonResonanceConfig(K=1))
    div = 0.7 + 0.05 + 0.02
    # the result is -sin of the same phase over the divisor
    expected = PoissonSeries.from_terms(dims, LIM, [(key, -c_ / div) for key, c_ in [
        (TermKey((0,), (1, 1, 0, 0), (1,), "s"), c), (TermKey((0,), (0, 0, 1, 1), (1,), "s"), c),
        (TermKey((0,), (0, 1, 1, 0), (1,), "c"), c), (TermKey((0,), (1, 0, 0, 1), (1,), "c"), -c)]])
    assert (Y2 - expected).max_abs() < 1e-14


def test_D2_of_sum_phase():
    dims = Dimensions(1, 2)
    freq = FrequencyPair([0.7], [0.05, 0.02])
    c = 0.3
    # 2 sqrt(J1 J2) cos(phi1 + phi2) = x1 x2 - y1 y2
    f = T(dims, (0,), (1, 1, 0, 0), (0,), "c", c) + T(dims, (0,), (0, 0, 1, 1), (0,), "c", -c)
    D2 = solve_D2(with_normal_part(f, freq), freq, NonResonanceConfig(K=1))
    # -2 sqrt(J1 J2) c sin(phi1 + phi2) / (Omega1 + Omega2) = -c (x1 y2 + y1 x2) / 0.07
    expected = (T(dims, (0,), (1, 0, 0, 1), (0,), "c", -c / 0.07)
                + T(dims, (0,), (0, 1, 1, 0), (0,), "c", -c / 0.07))
    assert (D2 - expected).max_abs() < 1e-13


def test_D2_leaves_phase_average():
    dims = Dimensions(1, 2)
    freq = FrequencyPair([0.7], [0.05, 0.02])
    f = T(dims, (0,), (2, 0, 0, 0), (0,), "c", 0.4) + T(dims, (0,), (0, 0, 2, 0), (0,), "c", 0.4)
    assert solve_D2(with_normal_part(f, freq), freq, NonResonanceConfig(K=1)).is_zero()


# -- residual oracles on random right-hand sides -----------------------------

def _random_block(rng, j1, j2, kmin, kmax, n=30):
    f = PoissonSeries.zero(D32, LIM)
    for _ in range(n):
        f = f + random_series(rng, D32, LIM, nterms=1, j1=j1, j2=j2, kmax=kmax)
    return f.select(kmin=kmin, kmax=kmax)


@pytest.mark.parametrize("family", ["chi0", "chi1", "X2", "Y2", "D2"])
def test_homological_residual_random(rng, family):
    r = 2
    if family == "chi0":
        rhs = _random_block(rng, 0, 0, 1, r)
        chi = solve_chi0(with_normal_part(rhs, FREQ32), r, FREQ32, CFG)
    elif family == "chi1":
        rhs = _random_block(rng, 0, 1, 0, r)
        chi = solve_chi1(with_normal_part(rhs, FREQ32), r, FREQ32, CFG)
    elif family == "X2":
        rhs = _random_block(rng, 1, 0, 1, r)
        chi = solve_X2(with_normal_part(rhs, FREQ32), r, FREQ32, CFG)
    elif family == "Y2":
        rhs = _random_block(rng, 0, 2, 1, r)
        chi = solve_Y2(with_normal_part(rhs, FREQ32), r, FREQ32, CFG)
    else:
        rhs = _random_block(rng, 0, 2, 0, 0, n=8)
        H = with_normal_part(rhs, FREQ32)
        rhs = rhs_D2(H, FREQ32)
        rhs = rhs - phase_average(rhs)
        chi = solve_D2(H, FREQ32, CFG)
    assert rhs.norm() > 0
    assert homological_residual(chi, rhs, FREQ32).norm() <= 1e-14 * rhs.norm()


@pytest.mark.parametrize("family,shape", [("chi0", (0, 0)), ("chi1", (0, 1)), ("X2", (1, 0)),
                                          ("Y2", (0, 2)), ("D2", (0, 2))])
def test_generator_shapes(rng, family, shape):
    r = 2
    H = normal_part(PoissonSeries.zero(D32, LIM), FREQ32)
    for j1, j2 in [(0, 0), (0, 1), (1, 0), (0, 2)]:
        H = H + _random_block(rng, j1, j2, 0, 2 * r, n=20)
    H = H + _random_block(rng, 0, 2, 0, 0, n=10)
    solver = {"chi0": solve_chi0, "chi1": solve_chi1, "X2": solve_X2, "Y2": solve_Y2}.get(family)
    chi = solver(H, r, FREQ32, CFG) if solver else solve_D2(H, FREQ32, CFG)
    assert not chi.is_zero()
    assert in_class(chi, *shape, 0 if family == "D2" else r * CFG.K)


# -- class rules of the Lie terms ---------------------------------------------

@pytest.mark.parametrize("family", ["chi0", "chi1", "X2", "Y2", "D2"])
def test_class_rules_of_lie_terms(rng, family):
    """Each (1/i!) L^i f lies in the class predicted by the degrees of the generator."""
    r, K, s = 2, 1, 1
    gen_shape = {"chi0": (0, 0), "chi1": (0, 1), "X2": (1, 0), "Y2": (0, 2), "D2": (0, 2)}[family]
    gk = 0 if family == "D2" else r * K
    chi = random_series(rng, D32, OPEN, nterms=6, j1=gen_shape[0], j2=gen_shape[1], kmax=gk)
    for j1, j2 in [(2, 0), (1, 1), (0, 3)]:
        f = random_series(rng, D32, OPEN, nterms=5, j1=j1, j2=j2, kmax=s * K)
        terms = []
        lie_transform(chi, f, max_order=4, terms_out=terms)
        for i, term in enumerate(terms, start=1):
            trig = s * K + i * gk
            if family == "chi0":
                assert in_class(term, j1 - i, j2, trig)
            elif family == "chi1":
                assert in_union_class(term, 2 * j1 + j2 - i, trig)
            elif family == "Y2":
                # p-derivatives trade one action for two secular factors
                assert in_union_class(term, 2 * j1 + j2, trig)
            else:
                assert in_class(term, j1, j2, trig)


# -- non-resonance -------------------------------------------------------------

def test_resonant_divisor_raises():
    dims = Dimensions(2, 0)
    freq = FrequencyPair([1.0, 2.0], [])
    f = PoissonSeries.term(dims, LIM, (0, 0), (), (2, -1), "c", 0.1)
    with pytest.raises(ResonanceError) as err:
        solve_chi0(with_normal_part(f, freq), 3, freq, NonResonanceConfig(K=1))
    assert err.value.k == (2, -1)
    assert err.value.divisor == 0.0


def test_nonresonance_report_enumeration():
    rep = check_nonresonance(FrequencyPair([1.0, math.sqrt(2.0)], [0.1]), 2, NonResonanceConfig())
    assert rep.entries["fast"]["min"] == pytest.approx(math.sqrt(2.0) - 1.0, rel=1e-15)
    assert sorted(map(abs, rep.entries["fast"]["index"])) == [1, 1]
    assert rep.passed()


def test_nonresonance_report_flags_resonance():
    rep = check_nonresonance(FrequencyPair([1.0, 2.0], [0.1]), 3, NonResonanceConfig())
    assert rep.entries["fast"]["min"] == 0.0
    assert rep.entries["fast"]["index"] == [2, -1]
    assert not rep.passed()


def test_great_inequality_among_small_divisors():
    n_star = [0.5297664232, 0.2127821321, 0.0745979957]
    small = [k for k, _ in smallest_fast_divisors(n_star, 18, count=10)]
    assert (2, -5, 0) in small or (-2, 5, 0) in small


def test_chi1_needs_no_angle_free_divisor_for_dalembert_input(rng):
    # only odd |k| in the terms linear in the secular variables
    dims = Dimensions(2, 2)
    freq = FrequencyPair([1.0, math.sqrt(2.0)], [0.01, 0.02])
    f = PoissonSeries.zero(dims, LIM)
    for k in [(1, 0), (0, 1), (2, -1), (1, 2), (3, 0)]:
        f = f + PoissonSeries.term(dims, LIM, (0, 0), (1, 0, 0, 0), k, "c", rng.normal())
        f = f + PoissonSeries.term(dims, LIM, (0, 0), (0, 0, 0, 1), k, "s", rng.normal())
    used = []
    solve_chi1(with_normal_part(f, freq), 3, freq, NonResonanceConfig(K=1), divisors_out=used)
    assert used and all(any(k) for k, _, _ in used)


# -- frequency update ------------------------------------------------------------

def test_update_frequencies_zero_and_single():
    freq = FrequencyPair([0.5, 0.2, 0.07], [-1e-5, -2e-5, -3e-5])
    zero = PoissonSeries.zero(Dimensions(3, 3), LIM)
    assert np.array_equal(update_frequencies(freq, zero, zero).omega, freq.omega)
    dims = Dimensions(3, 3)
    f10 = PoissonSeries.term(dims, LIM, (0, 1, 0), (0,) * 6, (0, 0, 0), "c", 0.001)
    new = update_frequencies(freq, f10, PoissonSeries.zero(dims, LIM))
    assert new.omega[1] == pytest.approx(0.201, rel=1e-15)
    assert new.omega[0] == 0.5 and new.omega[2] == 0.07


def test_update_frequencies_secular_coefficient():
    dims = Dimensions(1, 2)
    freq = FrequencyPair([0.5], [-1e-5, -2e-5])
    # 3e-6 J_2 = 1.5e-6 (x_2^2 + y_2^2)
    avg = (PoissonSeries.term(dims, LIM, (0,), (0, 2, 0, 0), (0,), "c", 1.5e-6)
           + PoissonSeries.term(dims, LIM, (0,), (0, 0, 0, 2), (0,), "c", 1.5e-6))
    new = update_frequencies(freq, PoissonSeries.zero(dims, LIM), avg)
    assert new.Omega[1] == pytest.approx(-2e-5 + 3e-6, rel=1e-14)


def test_update_frequencies_rejects_cross_terms():
    dims = Dimensions(2, 1)
    f = PoissonSeries.term(dims, LIM, (1, 1), (0, 0), (0, 0), "c", 1.0)
    with pytest.raises(ValueError):
        update_frequencies(FrequencyPair([1.0, 2.0], [0.1]), f, PoissonSeries.zero(dims, LIM))
    g = PoissonSeries.term(dims, LIM, (0, 0), (1, 1), (0, 0), "c", 1.0)
    with pytest.raises(ValueError):
        update_frequencies(FrequencyPair([1.0, 2.0], [0.1]), PoissonSeries.zero(dims, LIM), g)


# -- whole steps -------------------------------------------------------------------

def test_step_on_normal_form_is_identity():
    freq = FrequencyPair([0.7], [0.05])
    H = normal_part(PoissonSeries.zero(D11, LIM), freq) + T(D11, (2,), (0, 0), (0,), "c", 0.3)
    st = normalize_step(initial_state(H, freq, 1), NonResonanceConfig(K=1))
    assert all(g.is_zero() for g in st.gens[0].values())
    assert (st.H - H).max_abs() == 0.0
    assert np.array_equal(st.freq.omega, freq.omega)


def test_toy_step_matches_hand_composition():
    """H = w p + W J + d p^2 + e cos q: the step equals the hand-built generators composed."""
    w, W, d, e = 0.7, 0.05, 0.3, 1e-3
    lim = TruncationLimits(2, 4, 4)
    freq = FrequencyPair([w], [W])
    H0 = (normal_part(PoissonSeries.zero(D11, lim), freq) + T(D11, (2,), (0, 0), (0,), "c", d, lim)
          + T(D11, (0,), (0, 0), (1,), "c", e, lim))
    st = normalize_step(initial_state(H0, freq, 1), NonResonanceConfig(K=1))
    chi0 = T(D11, (0,), (0, 0), (1,), "s", -e / w, lim)
    X2 = T(D11, (1,), (0, 0), (1,), "s", 2 * d * e / w ** 2, lim)
    assert (st.gens[0]["chi0"] - chi0).max_abs() < 1e-18
    assert (st.gens[0]["X2"] - X2).max_abs() < 1e-17
    HI = lie_transform(chi0, H0, max_order=2)
    # order e^2 by hand: constant and cos 2q both d e^2 / (2 w^2), p cos q is -2 d e / w
    assert HI.constant_term() == pytest.approx(d * e * e / (2 * w * w), rel=1e-14)
    assert coef(HI, (0,), (0, 0), (2,), "c") == pytest.approx(d * e * e / (2 * w * w), rel=1e-14)
    assert coef(HI, (1,), (0, 0), (1,), "c") == pytest.approx(-2 * d * e / w, rel=1e-14)
    H1 = lie_transform(X2, HI, max_order=40, rel_tol=1e-16)
    assert (st.H - H1).max_abs() < 1e-17
    # first order p cos q cancels; what is left is third order in e
    a, b = 2 * d * e / w ** 2, -2 * d * e / w
    assert coef(st.H, (1,), (0, 0), (1,), "c") == pytest.approx(a * a * b / 2 + a ** 3 * w / 6, rel=1e-6)


def test_energy_consistency_of_one_step(rng):
    """H^(1) at a point equals H^(0) at the image of the point under the step."""
    from elltorus.orbit import Transport
    freq = FrequencyPair([1.0, math.sqrt(2.0), math.sqrt(5.0) / 3], [0.031, -0.017])
    lim = TruncationLimits(2, 4, 6)
    H0 = normal_part(PoissonSeries.zero(D32, lim), freq)
    for j1, j2 in [(0, 0), (0, 1), (1, 0), (0, 2), (2, 0), (1, 1)]:
        H0 = H0 + random_series(rng, D32, lim, nterms=6, j1=j1, j2=j2, kmax=2).scale(1e-4)
    st = normalize_step(initial_state(H0, freq, 2), NonResonanceConfig(alpha=1e-6, beta=1e-6, K=2))
    P = rng.normal(size=(5, 3)) * 1e-3
    Q = rng.uniform(0, 2 * np.pi, (5, 3))
    X, Y = rng.normal(size=(5, 2)) * 1e-3, rng.normal(size=(5, 2)) * 1e-3
    p, q, x, y = P, Q, X, Y
    for name in ("D2", "Y2", "X2", "chi1", "chi0"):
        p, q, x, y = Transport.build(st.gens[0][name]).apply(p, q, x, y)
    before = H0.evaluate_many(p, q, x, y)
    after = st.H.evaluate_many(P, Q, X, Y)
    assert np.max(np.abs(after - before)) <= 1e-9 * np.max(np.abs(before))


def test_targeted_remainder_shrinks_on_toy():
    freq = FrequencyPair([0.7, 1.3], [0.05])
    dims = Dimensions(2, 1)
    lim = TruncationLimits(2, 4, 6)
    H = normal_part(PoissonSeries.zero(dims, lim), freq)
    H = H + PoissonSeries.term(dims, lim, (0, 0), (0, 0), (1, 0), "c", 1e-3)
    H = H + PoissonSeries.term(dims, lim, (0, 0), (1, 0), (0, 1), "c", 1e-3)
    H = H + PoissonSeries.term(dims, lim, (1, 0), (0, 0), (0, 0), "c", 0.0)
    H = H + PoissonSeries.term(dims, lim, (2, 0), (0, 0), (0, 0), "c", 0.1)
    st = initial_state(H, freq, 1)
    st = normalize(st, 3, NonResonanceConfig(K=1))
    rem = targeted_remainder(st)
    assert max(rem.values()) < 1e-6


def test_step_beyond_trig_limit_raises():
    freq = FrequencyPair([0.7], [0.05])
    H = normal_part(PoissonSeries.zero(D11, TruncationLimits(2, 4, 2)), freq)
    st = NormalizationState(2, H, freq, 1)
    with pytest.raises(ValueError):
        normalize_step(st, NonResonanceConfig(K=1))


def test_invalid_config():
    with pytest.raises(ValueError):
        NonResonanceConfig(alpha=0.0)
    with pytest.raises(ValueError):
        NonResonanceConfig(K=0)


# -- persistence -----------------------------------------------------------------

def test_checkpoints_and_norms_roundtrip(tmp_path):
    freq = FrequencyPair([0.7], [0.05])
    lim = TruncationLimits(2, 4, 4)
    H = (normal_part(PoissonSeries.zero(D11, lim), freq) + T(D11, (0,), (0, 0), (1,), "c", 1e-3, lim)
         + T(D11, (0,), (1, 0), (1,), "s", 1e-3, lim) + T(D11, (2,), (0, 0), (0,), "c", 0.2, lim))
    st = initial_state(H, freq, 1, constant=-1.5)
    write_checkpoint(st, tmp_path)
    for _ in range(2):
        st = normalize_step(st, NonResonanceConfig(K=1))
        write_checkpoint(st, tmp_path)
    back = read_checkpoints(tmp_path, 2)
    assert (back.H - st.H).max_abs() == 0.0
    assert np.array_equal(back.freq.omega, st.freq.omega)
    assert back.constant == st.constant
    for a, b in zip(back.gens, st.gens):
        assert all((a[k] - b[k]).max_abs() == 0.0 for k in a)
    write_norms_csv(st, tmp_path / "norms.csv")
    rows = read_norms_csv(tmp_path / "norms.csv")
    assert [r["r"] for r in rows] == [1, 2]
    assert rows[1]["X2"] == st.norms[1]["X2"]
