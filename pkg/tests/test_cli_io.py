import hashlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from krmcf.cli_io import (EXIT_ACCEPTANCE, EXIT_OK, EXIT_VALIDATION, build_scenario, colormap,
                          convergence_levels, load_config, main, parse_config, read_ppm, read_series,
                          read_snapshot, shipped_scenarios, snapshot_name, write_outputs, write_ppm,
                          write_snapshot)
from krmcf.errors import ParseError, ValidationError
from krmcf.flow import SERIES, run

MINIMAL = "base = flat\nr = 0\ngrid = 16\nT = 0.1\nf1 = 0\nf2 = 0\n"


def tree_digest(folder):
    h = hashlib.sha256()
    for p in sorted(Path(folder).iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# parsing ---------------------------------------------------------------------------

def test_minimal_config_uses_defaults():
    cfg = parse_config(MINIMAL)
    assert (cfg.base, cfg.r, cfg.grid, cfg.T) == ("flat", 0.0, 16, 0.1)
    assert cfg.samples == 20 and cfg.winding == (0.0,) * 4 and cfg.method == "fd"
    assert parse_config(MINIMAL.replace("flat", "round").replace("r = 0", "r = 2")).method == "spectral"


@pytest.mark.parametrize("text,exc,fragment", [
    (MINIMAL + "bogus = 1\n", ParseError, "line 7: unknown key 'bogus'"),
    (MINIMAL + "grid = 32\n", ParseError, "duplicate key 'grid'"),
    (MINIMAL + "just words\n", ParseError, "line 7"),
    (MINIMAL.replace("T = 0.1", "T = soon"), ParseError, "T expects a number"),
    (MINIMAL.replace("grid = 16", "grid = 63"), ValidationError, "grid must be even power of two in [16,512]"),
    (MINIMAL.replace("grid = 16", "grid = 1024"), ValidationError, "grid must be even power of two"),
    (MINIMAL.replace("T = 0.1", "T = 0"), ValidationError, "T must be positive"),
    (MINIMAL.replace("r = 0", "r = 2"), ValidationError, "r must equal"),
    (MINIMAL.replace("f2 = 0\n", ""), ValidationError, "missing required keys: f2"),
    (MINIMAL + "samples = 2\nsnapshots = 3\n", ValidationError, "snapshots"),
    (MINIMAL + "samples = 1\n", ValidationError, "samples must be at least 2"),
    (MINIMAL + "probe = angle\n", ValidationError, "probe_t0"),
    (MINIMAL.replace("f1 = 0", "f1 = sin(z)"), ParseError, "unknown name 'z'"),
    (MINIMAL.replace("f1 = 0", "f1 = (1).__class__"), ParseError, "unsupported syntax"),
    (MINIMAL.replace("f1 = 0", "f1 = __import__('os')"), ParseError, ""),
    (MINIMAL.replace("f1 = 0", "f1 = sin(x"), ParseError, "malformed expression"),
    (MINIMAL + "winding = 1 0 0\n", ParseError, "winding expects four numbers"),
])
def test_config_errors(text, exc, fragment):
    with pytest.raises(exc) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_symmetry_of_initial_data_is_checked():
    with pytest.raises(ValidationError, match="periodic"):
        build_scenario(parse_config(MINIMAL.replace("f1 = 0", "f1 = 0.1*x")))
    sph = "base = round\nr = 2\ngrid = 16\nT = 0.1\nf1 = 0.1*cos(theta)\nf2 = 0\nwinding = 1 0 0 1\n"
    with pytest.raises(ValidationError, match="odd"):
        build_scenario(parse_config(sph))
    build_scenario(parse_config(sph.replace("cos", "sin")))


@given(st.integers(0, 2 ** 31 - 1))
def test_seeded_perturbation_is_reproducible(seed):
    cfg = parse_config(MINIMAL + f"perturb = 0.05\nseed = {seed}\n")
    a = build_scenario(cfg).initial.surface.p
    b = build_scenario(cfg).initial.surface.p
    np.testing.assert_array_equal(a, b)
    assert np.max(np.abs(a[2:])) == pytest.approx(0.05)


def test_shipped_scenarios_load():
    names = shipped_scenarios()
    assert {"diagonal-flat", "lagrangian-anti-diagonal", "curved-lagrangian", "perturbed-graph-torus",
            "perturbed-graph-flat", "round-symplectic", "round-near-horizontal",
            "near-degenerate"} <= set(names)
    for name in names:
        cfg = load_config(name)
        assert cfg.name == name
        build_scenario(cfg, grid_size=16)


def test_shipped_scenarios_are_exercised_by_acceptance():
    text = (Path(__file__).parent / "test_acceptance.py").read_text()
    for name in shipped_scenarios():
        assert f'"{name}"' in text, name


def test_convergence_levels():
    assert convergence_levels(64, 3) == [16, 32, 64]
    assert convergence_levels(32, 3) == [16, 32, 64]
    assert convergence_levels(16, 6) == [16, 32, 64, 128, 256, 512]
    assert convergence_levels(512, 2) == [256, 512]
    with pytest.raises(ValidationError):
        convergence_levels(64, 7)


# artifacts ---------------------------------------------------------------------------

def diagonal_run(samples=3, snapshots=0):
    cfg = load_config("diagonal-flat")
    cfg.samples, cfg.snapshots, cfg.grid = samples, snapshots, 16
    return run(build_scenario(cfg))


def test_series_csv_layout(tmp_path):
    write_outputs(diagonal_run(), tmp_path)
    lines = (tmp_path / "series.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].split(",") == ["t"] + list(SERIES)
    data = read_series(tmp_path / "series.csv")
    np.testing.assert_allclose(data["t"], [0, 0.5, 1])
    np.testing.assert_allclose(data["min_cos_alpha"], 1.0)


def test_snapshot_round_trip(tmp_path, rng):
    fields_ = {"a": rng.normal(size=(8, 6)), "b": np.full((8, 6), 1.0 / 3.0)}
    p = tmp_path / snapshot_name(0.25)
    assert p.name == "snap_0.250000.dat"
    write_snapshot(p, 0.25, fields_)
    t, back = read_snapshot(p)
    assert t == 0.25 and list(back) == ["a", "b"]
    for k in fields_:
        np.testing.assert_array_equal(back[k], fields_[k])


def test_colormap_definition():
    cm = colormap()
    assert cm.shape == (256, 3) and cm.dtype == np.uint8
    assert tuple(cm[0]) == (0, 0, 255) and tuple(cm[255]) == (255, 0, 0)
    assert tuple(cm[128]) == (128, 254, 127)


def test_ppm_is_deterministic(tmp_path):
    x = np.linspace(0, 1, 12).reshape(3, 4)
    write_ppm(tmp_path / "a.ppm", x)
    write_ppm(tmp_path / "b.ppm", x)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    img = read_ppm(tmp_path / "a.ppm")
    assert img.shape == (3, 4, 3)
    assert tuple(img[0, 0]) == tuple(colormap()[0]) and tuple(img[-1, -1]) == tuple(colormap()[255])
    write_ppm(tmp_path / "c.ppm", np.ones((4, 1)))
    assert read_ppm(tmp_path / "c.ppm").shape == (4, 8, 3)


def test_outputs_are_bit_identical(tmp_path):
    write_outputs(diagonal_run(4, 2), tmp_path / "a")
    write_outputs(diagonal_run(4, 2), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["A2_0.000000.ppm", "A2_1.000000.ppm", "cos_alpha_0.000000.ppm",
                     "cos_alpha_1.000000.ppm", "series.csv", "snap_0.000000.dat", "snap_1.000000.dat"]
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


# command line --------------------------------------------------------------------------

def test_cli_validation_exit(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(MINIMAL.replace("grid = 16", "grid = 63"))
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "grid must be even power of two in [16,512]" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_VALIDATION
    assert main(["convergence", "diagonal-flat", "--levels", "1"]) == EXIT_VALIDATION


def test_cli_run_and_overrides(tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text(MINIMAL + "winding = 1 0 0 1\nsamples = 3\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--snapshots", "1", "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "o" / "series.csv").exists()
    assert (tmp_path / "o" / "snap_0.000000.dat").exists()


def test_cli_verify_pass_and_fail(tmp_path, capsys):
    assert main(["verify", "lagrangian-anti-diagonal", "--out", str(tmp_path / "ok")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS  lagrangian preserved" in out and "FAIL" not in out
    strict = tmp_path / "strict.cfg"
    strict.write_text(MINIMAL + "u1 = 0.1*sin(y)\nwinding = 1 0 0 1\nsamples = 2\nresidual_tol = 1e-14\n")
    assert main(["verify", str(strict), "--out", str(tmp_path / "strict")]) == EXIT_ACCEPTANCE
    assert "FAIL  residual" in (tmp_path / "strict" / "verify.txt").read_text()


def test_cli_convergence_table(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(MINIMAL + "u1 = 0.1*cos(x)\nwinding = 1 0 0 1\n")
    assert main(["convergence", str(cfg), "--levels", "2", "--out", str(tmp_path)]) == EXIT_OK
    rows = (tmp_path / "convergence.csv").read_text().splitlines()
    assert rows[0] == "identity,grid,dt,linf,l2,order"
    assert len(rows) == 1 + 2 * 7
