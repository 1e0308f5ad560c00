import json
import shutil

import numpy as np
import pytest

from elltorus.cli import EXIT_IO, EXIT_RESONANCE, main
from elltorus.dynamics import sjsu_system
from elltorus.expansion import lambda_star_from_semimajor
from elltorus.orbit import read_orbit_csv
from elltorus.spectral import read_table_csv

SJSU = sjsu_system()
LAM = lambda_star_from_semimajor(SJSU, SJSU.elements.a)

SMALL = f"""
limits.max_j1 = 2
limits.max_l = 4
limits.max_trig = 6
expansion.kepler_order = 2
expansion.grid = 32
normalize.R = 2
normalize.K = 2
lambda_star.1 = {float(LAM[0])!r}
lambda_star.2 = {float(LAM[1])!r}
lambda_star.3 = {float(LAM[2])!r}
integrator.dt = 0.1
integration.t_span = 256
integration.sample_every = 1
orbit.sample_every = 1
orbit.span = 16384
analyze.components = 8
"""


def _run(cfg, out, *cmds, steps=None):
    extra = [] if steps is None else ["--steps", str(steps)]
    return [main([c, "--config", str(cfg), "--out-dir", str(out)] + extra) for c in cmds]


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.txt"
    p.write_text(SMALL)
    return p


@pytest.fixture(scope="module")
def pipeline(cfg_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    codes = _run(cfg_file, out, "expand", "normalize", "orbit", "integrate")
    codes += _run(cfg_file, out, "integrate", steps=0)
    codes += _run(cfg_file, out, "analyze", "compare")
    return out, codes


def test_pipeline_succeeds(pipeline):
    out, codes = pipeline
    assert codes == [0] * len(codes)
    for name in ("H0.bin", "H0.json", "config.txt", "normalize/norms.csv", "orbit_R2.csv", "ic_R2.json",
                 "traj_R2.npz", "traj_R0.npz", "analyze.json", "compare_R2.json"):
        assert (out / name).exists(), name


def test_manifest_lists_every_output(pipeline):
    out, _ = pipeline
    man = json.loads((out / "manifest.json").read_text())
    assert [r["command"] for r in man["runs"]] == ["expand", "normalize", "orbit", "integrate", "integrate",
                                                   "analyze", "compare"]
    for rel in man["outputs"]:
        assert (out / rel).exists(), rel
    written = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert written == set(man["outputs"])


def test_semi_analytic_orbit_is_quasi_periodic(pipeline):
    out, _ = pipeline
    rep = json.loads((out / "analyze.json").read_text())
    assert rep["orbit_max_residual"] <= 1e-10
    rows = read_table_csv(out / "spectrum_orbit_R2_planet1.csv")
    assert rows and all(r["residual"] <= 1e-10 for r in rows)


def test_analyze_reports_both_runs(pipeline):
    out, _ = pipeline
    rep = json.loads((out / "analyze.json").read_text())
    assert set(rep["runs"]) == {"0", "2"}
    assert len(rep["secular_drop"]) == 3
    for om in rep["omega_inf"].values():
        # 256 yr is shorter than the great-inequality period, so only a loose check
        assert np.allclose(om, [0.5297, 0.2128, 0.0746], rtol=1e-2)


def test_compare_short_run_stays_close(pipeline):
    out, _ = pipeline
    rep = json.loads((out / "compare_R2.json").read_text())
    assert rep["samples"] == 257
    # a trig-6 normal form drifts in phase; the curves still start together
    assert max(rep["max_position_deviation"]) < 1.0
    _, cols = read_orbit_csv(out / "orbit_R2.csv")
    r0 = np.load(out / "traj_R2.npz")["r"][0]
    assert abs(cols["x_2"][0] - r0[1, 0]) <= 1e-12


def test_pipeline_is_deterministic(cfg_file, pipeline, tmp_path):
    out, _ = pipeline
    assert _run(cfg_file, tmp_path, "expand", "normalize") == [0, 0]
    names = [p.relative_to(out) for p in out.rglob("*") if p.is_file()
             and (p.name.startswith("H0") or p.parent.parent.name == "normalize" or p.parent.name == "normalize")]
    assert len(names) > 10
    for name in names:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_zero_steps_orbit_is_circular(cfg_file, pipeline):
    out, _ = pipeline
    assert _run(cfg_file, out, "orbit", steps=0) == [0]
    _, cols = read_orbit_csv(out / "orbit_R0.csv")
    assert np.max(np.abs(cols["xi_1"])) <= 1e-15


def test_missing_expansion_is_io_error(cfg_file, tmp_path, capsys):
    assert _run(cfg_file, tmp_path, "normalize") == [EXIT_IO]
    assert "expand" in capsys.readouterr().err


def test_bad_config_is_io_error(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("normalize.R = 40\nlimits.max_trig = 6\n")
    assert _run(p, tmp_path, "normalize") == [EXIT_IO]
    assert main(["expand", "--config", str(tmp_path / "nope.txt"), "--out-dir", str(tmp_path)]) == EXIT_IO


def test_resonance_exit_code(cfg_file, pipeline, tmp_path, capsys):
    out, _ = pipeline
    for f in out.glob("H0*"):
        shutil.copy(f, tmp_path)
    p = tmp_path / "strict.txt"
    p.write_text(cfg_file.read_text() + "normalize.alpha = 10\n")
    assert _run(p, tmp_path, "normalize") == [EXIT_RESONANCE]
    assert "resonance" in capsys.readouterr().err
