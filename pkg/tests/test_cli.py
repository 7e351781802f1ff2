import json
import math

import numpy as np
import pytest

from fdcorrect import scenario as scn
from fdcorrect.cli import EXIT_CONFIG, EXIT_OK, main, read_signal_csv

BUNDLED = ["dro_periodic", "quasi_dro", "nrho_multi", "elfo_constellation"]


def run(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    return json.loads(path.read_text())


# --- scenarios --------------------------------------------------------------------


def test_bundled_scenarios_are_listed():
    assert sorted(scn.bundled_scenarios()) == sorted(BUNDLED)


@pytest.mark.parametrize("name", BUNDLED)
@pytest.mark.parametrize("profile", [None, "ci"])
def test_bundled_scenarios_load_and_build(name, profile):
    sc = scn.load_scenario(name, profile)
    b = scn.build(sc)
    assert b.model is not None and b.signals
    for rc in b.signals.values():
        assert rc.N % 2 == 0 and rc.span > 0


def test_unknown_profile_rejected():
    with pytest.raises(scn.ScenarioError, match="profile"):
        scn.load_scenario("dro_periodic", "nightly")


def test_field_errors_are_reported(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('format_version = 1\nname = "x"\n[model]\nkind = "nbody"\n')
    with pytest.raises(scn.ScenarioError, match="model.kind"):
        scn.load_scenario(bad)


def test_toml_syntax_errors_are_reported(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("name = = 3\n")
    with pytest.raises(scn.ScenarioError, match="line 1"):
        scn.load_scenario(bad)


def test_json_scenarios_are_accepted(tmp_path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    raw = tomllib.loads(scn.bundled_scenarios()["dro_periodic"].read_text())
    path = tmp_path / "dro.json"
    path.write_text(json.dumps(raw))
    assert scn.load_scenario(path, "ci").name == "dro_periodic"


# --- commands ---------------------------------------------------------------------


def test_help_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "correct-multi" in capsys.readouterr().out


def test_unknown_scenario_exits_with_config_error(tmp_path, capsys):
    assert run("propagate", "no_such_orbit", "-o", tmp_path) == EXIT_CONFIG
    assert "dro_periodic" in capsys.readouterr().err


def test_malformed_scenario_exits_with_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('format_version = 1\nname = "x"\n[model]\nkind = "nbody"\n')
    assert run("propagate", bad, "-o", tmp_path / "o") == EXIT_CONFIG
    assert "model.kind" in capsys.readouterr().err


def test_spectrum_without_input_is_a_config_error(tmp_path):
    assert run("spectrum", "-o", tmp_path) == EXIT_CONFIG


def test_propagate_closes_the_periodic_orbit(tmp_path):
    assert run("propagate", "dro_periodic", "--profile", "ci", "-o", tmp_path) == EXIT_OK
    data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=2)
    assert data.shape == (401, 7)
    assert np.max(np.abs(data[-1, 1:] - data[0, 1:])) < 1e-10


def test_zero_span_propagation(tmp_path):
    text = scn.bundled_scenarios()["dro_periodic"].read_text().replace("span_nd = 1.6", "span_nd = 0.0")
    path = tmp_path / "zero.toml"
    path.write_text(text)
    assert run("propagate", path, "-o", tmp_path / "o") == EXIT_OK
    data = np.loadtxt(tmp_path / "o" / "trajectory.csv", delimiter=",", skiprows=2, ndmin=2)
    assert data.shape == (1, 7)


def test_refine_periodic_orbit_harmonics(tmp_path):
    assert run("refine", "dro_periodic", "--profile", "ci", "-o", tmp_path) == EXIT_OK
    freq = read_json(tmp_path / "frequency.json")
    comps = freq["signals"]["q"]["components"]
    nu = 2 * math.pi / 1.6
    assert abs(comps[0]["nu_nd"] - nu) < 1e-7
    assert freq["signals"]["q"]["report"]["converged"]


def test_spectrum_outputs(tmp_path):
    assert run("spectrum", "dro_periodic", "--profile", "ci", "--peaks", "5", "-o", tmp_path) == EXIT_OK
    peaks = read_json(tmp_path / "peaks_q.json")
    assert len(peaks["peaks"]) == 5
    spec = np.loadtxt(tmp_path / "spectrum_q.csv", delimiter=",", skiprows=2)
    assert spec.shape[1] == 6 and spec.shape[0] == peaks["N"] // 2 + 1


def test_outputs_are_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run("refine", "dro_periodic", "--profile", "ci", "-o", tmp_path / d) == EXIT_OK
    assert (tmp_path / "a" / "frequency.json").read_bytes() == (tmp_path / "b" / "frequency.json").read_bytes()


def test_signal_csv_input(tmp_path):
    t = 0.05 * np.arange(2048)
    q = 0.2 + np.cos(3.1 * t + 0.4) + 0.1 * np.cos(7.3 * t - 1.0)
    path = tmp_path / "sig.csv"
    np.savetxt(path, np.column_stack([t, q]), delimiter=",", header="t,q", comments="")
    sig = read_signal_csv(path)
    assert sig.N == 2048 and sig.dt == pytest.approx(0.05)
    assert run("refine", "--signal-csv", path, "-o", tmp_path / "o") == EXIT_OK
    comps = read_json(tmp_path / "o" / "frequency.json")["signals"]
    comps = next(iter(comps.values()))["components"]
    assert comps[0]["nu_nd"] == pytest.approx(3.1, abs=1e-10)
    assert comps[1]["A_nd"] == pytest.approx(0.1, abs=1e-10)


def test_signal_csv_must_be_uniform(tmp_path):
    path = tmp_path / "sig.csv"
    np.savetxt(path, np.column_stack([[0, 1, 2, 4], [1, 2, 3, 4]]), delimiter=",")
    assert run("spectrum", "--signal-csv", path, "-o", tmp_path / "o") == EXIT_CONFIG


def test_correct_single_ci(tmp_path):
    assert run("correct-single", "quasi_dro", "--profile", "ci", "--emit-plots", "-o", tmp_path) == EXIT_OK
    sol = read_json(tmp_path / "solution.json")
    assert sol["converged"] and sol["frequency_residual_nd"] <= 1e-8
    ver = {r["label"]: r for r in read_json(tmp_path / "frequency.json")["verification"]}
    assert abs(ver["C"]["nu_error"]) < 1e-8
    assert abs(ver["Q"]["A_rel_error"]) < 1e-6
    assert (tmp_path / "plots" / "geometry_brf.csv").exists()
    assert (tmp_path / "iterations.csv").exists()


def test_correct_multi_ci(tmp_path):
    assert run("correct-multi", "nrho_multi", "--profile", "ci", "-o", tmp_path) == EXIT_OK
    sol = read_json(tmp_path / "solution.json")
    assert sol["converged"] and sol["continuity_residual_nd"] <= 1e-10
    assert len(sol["epochs_nd"]) == 61


def test_constellation_ci(tmp_path):
    assert run("constellation", "elfo_constellation", "--profile", "ci", "-o", tmp_path) == EXIT_OK
    out = read_json(tmp_path / "constellation.json")
    assert out["converged"]
    for rel in out["relative_phases_rad"]:
        for v in rel.values():
            assert abs(v["error"]) < 1e-7
            assert abs(abs(v["target"]) - 2 * math.pi / 3) < 1e-12
    assert (tmp_path / "drift_converged.csv").exists()
