import numpy as np
import pytest

from elltorus.spectral import (Signal, SpectrumComponent, decompose, dominant_frequency, fast_frequencies,
                               fit_amplitudes, inversions, match_harmonics, read_table_csv, reconstruction_error,
                               secular_lines, synthesize, weighted_residual_energy, write_table_csv)

N16 = 1 << 16
# fast frequencies implied by the Uranus spectrum: rows (-1,0,0), (0,-1,0), (0,0,-1)
OMEGA_T2 = np.array([5.29766595089407821e-1, 2.12781753538397789e-1, 7.45980878285529281e-2])


def _signal(zetas, amps, n=N16, noise=None):
    t = np.arange(n, dtype=float)
    comps = [SpectrumComponent(z, c) for z, c in zip(zetas, amps)]
    f = synthesize(t, comps)
    if noise is not None:
        f = f + noise
    return Signal(f)


def test_single_exponential():
    z, c = 0.3141592, 2e-4 * np.exp(0.7j)
    out = decompose(_signal([z], [c]), 3)
    assert abs(out[0].zeta - z) <= 1e-12
    assert abs(out[0].c - c) / abs(c) <= 1e-10


def test_three_components_recovered():
    zetas = [0.5299, -0.0746, 1.1e-5]
    amps = [3e-4 * np.exp(0.3j), 5e-5 * np.exp(-1.1j), 2e-7 * np.exp(2.0j)]
    sig = _signal(zetas, amps)
    out = decompose(sig, 5)
    assert len(out) == 3
    for comp, z, c in zip(out, zetas, amps):
        assert abs(comp.zeta - z) <= 1e-9
        assert abs(comp.c - c) / abs(c) <= 1e-8
    assert reconstruction_error(sig, out) <= 1e-10


def test_zero_signal_has_no_components():
    assert decompose(Signal(np.zeros(1024)), 4) == []


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        decompose(Signal(np.ones(8)), 0)
    with pytest.raises(ValueError):
        Signal(np.ones(1))
    with pytest.raises(ValueError):
        Signal(np.ones(8), dt_sample=0.0)


def test_sample_spacing_and_origin():
    z, c = 0.05, 1e-3 + 2e-4j
    t = 100.0 + 4.0 * np.arange(8192)
    out = decompose(Signal(c * np.exp(1j * z * t), 4.0, 100.0), 2)
    assert abs(out[0].zeta - z) <= 1e-12
    assert abs(out[0].c - c) <= 1e-10 * abs(c)


def test_dropping_largest_component_raises_error_to_its_size():
    zetas = [-0.0745, 0.3805, 0.0636]
    amps = [3e-4, 5.5e-5j, 1.8e-5]
    sig = _signal(zetas, amps)
    full = decompose(sig, 3)
    assert reconstruction_error(sig, full) <= 1e-10
    err = reconstruction_error(sig, full[1:])
    assert err == pytest.approx(abs(amps[0]), rel=0.5)


def test_residual_energy_decreases_with_each_component(rng):
    zetas = [0.53, -0.21, 0.07, 1.3e-3, -0.9]
    amps = 10.0 ** -np.arange(3, 8) * np.exp(1j * rng.uniform(0, 2 * np.pi, 5))
    sig = _signal(zetas, amps, n=1 << 14, noise=1e-9 * rng.normal(size=1 << 14))
    out = decompose(sig, 5)
    energies = [weighted_residual_energy(sig, out[:m]) for m in range(len(out) + 1)]
    assert all(b < a for a, b in zip(energies, energies[1:]))


def test_resolution_floor():
    T = N16 - 1
    dz = 4 * 2 * np.pi / T
    zetas = [0.2, 0.2 + dz]
    amps = [1e-4, 6e-5]
    out = decompose(_signal(zetas, amps), 2)
    got = sorted(c.zeta for c in out)
    assert np.max(np.abs(np.array(got) - zetas)) <= 1e-8
    assert not any(c.unresolved for c in out)


def test_unresolved_pair_is_flagged():
    T = 4095
    zetas = [0.2, 0.2 + 0.3 * 2 * np.pi / T]
    out = decompose(_signal(zetas, [1e-4, 7e-5], n=4096), 2)
    assert len(out) == 2 and out[1].unresolved


def test_fit_amplitudes_matches_synthesis():
    zetas = [0.11, -0.37, 0.9]
    amps = np.array([1.0, 0.5 - 0.2j, 1e-3j])
    got = fit_amplitudes(_signal(zetas, amps, n=4096), zetas)
    assert np.max(np.abs(got - amps)) <= 1e-12


def test_match_first_uranus_rows():
    rows = [(-7.45980878285529281e-2, (0, 0, -1)), (3.80570419432301466e-1, (1, 0, -2)),
            (6.35855778812917105e-2, (0, 1, -2)), (2.01769243591136460e-1, (0, 2, -3)),
            (-2.12781753538397789e-1, (0, -1, 0)), (1.29090743395401009, (3, 0, -4))]
    out = match_harmonics([SpectrumComponent(z, 1.0) for z, _ in rows], OMEGA_T2)
    for comp, (z, k) in zip(out, rows):
        assert comp.k == k
        # omega is rebuilt from 18-digit decimals, so a few ulps of slack
        assert comp.residual <= 2e-15
    assert out[0].residual == 0.0


def test_match_secular_line_to_zero_vector():
    out = match_harmonics([SpectrumComponent(-1.10827474865547476e-5, 1.0)], OMEGA_T2)
    assert out[0].k == (0, 0, 0)
    assert out[0].residual == pytest.approx(1.10827474865547476e-5, rel=1e-12)


def test_match_tie_prefers_smaller_vector():
    # omega_2 = 2 omega_1, so zeta = 2 omega_1 is matched by (2, 0) and (0, 1)
    out = match_harmonics([SpectrumComponent(1.0, 1.0)], [0.5, 1.0], kmax=4)
    assert out[0].k == (0, 1)
    out = match_harmonics([SpectrumComponent(0.0, 1.0)], [0.5, 1.0], kmax=4)
    assert out[0].k == (0, 0)


def test_match_respects_kmax():
    out = match_harmonics([SpectrumComponent(7.0, 1.0)], [1.0], kmax=3)
    assert out[0].k == (3,) and out[0].residual == pytest.approx(4.0)


def test_fast_frequency_of_uniform_rotation():
    n = 0.5297664232
    t = np.arange(8192, dtype=float)
    lam = np.column_stack([1.3 + n * t, 0.2 - 0.5 * n * t])
    Lam = np.column_stack([np.full_like(t, 0.07), np.full_like(t, 0.02)])
    got = fast_frequencies(Lam, lam)
    assert got == pytest.approx([n, -0.5 * n], abs=1e-10)


def test_dominant_frequency_ambiguity():
    sig = _signal([0.3, -0.4], [1.0, 0.95], n=4096)
    with pytest.raises(ValueError):
        dominant_frequency(sig)
    assert dominant_frequency(_signal([0.3, -0.4], [1.0, 0.5], n=4096)) == pytest.approx(0.3, abs=1e-10)


def test_inversions_and_secular_lines():
    comps = [SpectrumComponent(z, a) for z, a in [(0.1, 3.0), (1e-5, 1.0), (0.2, 2.0), (-4e-4, 0.5)]]
    assert inversions(comps) == 1
    lines = secular_lines(comps, band=1e-3)
    assert [c.zeta for c in lines] == [1e-5, -4e-4]
    assert secular_lines(comps, band=1e-3, floor=0.8) == lines[:1]


def test_table_csv_round_trip(tmp_path):
    comps = match_harmonics([SpectrumComponent(-7.45980878285529281e-2, 2.9778e-4),
                             SpectrumComponent(-1.10827474865547476e-5, 2.3288e-7j)], OMEGA_T2)
    p = tmp_path / "t.csv"
    write_table_csv(comps, p)
    rows = read_table_csv(p)
    assert rows[0]["zeta"] == comps[0].zeta
    assert rows[0]["k"] == (0, 0, -1)
    assert rows[1]["abs_c"] == pytest.approx(2.3288e-7, rel=1e-6)
    assert p.read_text().splitlines()[0] == "j,zeta,k,residual,abs_c"
