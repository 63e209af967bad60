import json
import os

import numpy as np
import pytest

from isotorus import cli, config
from isotorus.jacobi import JacobiMatrix, write_jacobi_csv
from isotorus.utils import extract_column, read_csv_table


@pytest.fixture(autouse=True)
def no_user_config(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "DEFAULT_CONFIG_FILE", str(tmp_path / "no-config.json"))


def run(*argv) -> int:
    with pytest.raises(SystemExit) as info:
        cli.main(list(argv))
    return info.value.code


def test_bands(tmp_path, capsys):
    out = tmp_path / "out"
    assert run("-o", str(out), "bands", "--ifs", "example1", "--n", "2") == 0
    bands = read_csv_table(str(out / "bands_n2.csv"))
    assert len(bands["dataset"]) == 4
    gaps = read_csv_table(str(out / "gaps_n2.csv"))
    assert extract_column(gaps, "birth_level") == [1.0, 2.0, 2.0]
    captured = capsys.readouterr()
    assert "total length" in captured.out
    assert "bands_n2.csv" in captured.err


def test_output_flags_after_command(tmp_path):
    out = tmp_path / "late"
    assert run("bands", "--ifs", "cantor", "--n", "1", "-o", str(out), "--svg") == 0
    assert (out / "gaps_n1.svg").exists()
    assert (out / "gaps_n1.svg").read_text().lstrip().startswith("<?xml")


def test_equilibrium_of_explicit_band(tmp_path, capsys):
    out = tmp_path / "out"
    assert run("-o", str(out), "equilibrium", "--band", "-1", "1") == 0
    bands = read_csv_table(str(out / "equilibrium_bands_bands.csv"))
    assert extract_column(bands, "mass") == pytest.approx([1.0])
    assert "0.5" in capsys.readouterr().out


def test_equilibrium_of_ifs_level(tmp_path):
    out = tmp_path / "out"
    ifs_path = tmp_path / "ifs.json"
    ifs_path.write_text(json.dumps({"maps": [{"delta": 0.34, "gamma": -1.0}, {"delta": 0.52, "gamma": 1.0}]}))
    assert run("-o", str(out), "equilibrium", "--ifs", str(ifs_path), "--n", "2") == 0
    gaps = read_csv_table(str(out / "equilibrium_gaps_n2.csv"))
    assert len(gaps["dataset"]) == 3
    assert extract_column(gaps, "position") == [2.0, 1.0, 3.0]


def test_torus_jacobi(tmp_path):
    out = tmp_path / "out"
    assert run("-o", str(out), "torus-jacobi", "--ifs", "example1", "--n", "1", "--J", "64") == 0
    table = read_csv_table(str(out / "torus_jacobi_n1.csv"))
    assert len(table["dataset"]) == 64
    assert os.path.exists(out / "torus_error_n1.csv")


def test_compare(tmp_path, capsys):
    x = write_jacobi_csv(JacobiMatrix(a=np.zeros(4), b=[0.0, 0.5, 0.5, 0.5]), str(tmp_path / "x.csv"))
    y = write_jacobi_csv(JacobiMatrix(a=np.zeros(4), b=[0.0, 0.5, 0.6, 0.5]), str(tmp_path / "y.csv"))
    out = tmp_path / "out"
    assert run("-o", str(out), "compare", x, y, "--eps", "0.2,0.05") == 0
    profile = read_csv_table(str(out / "compare.csv"))
    assert extract_column(profile, "j") == [1.0, 2.0, 3.0]
    assert "N(eps)" in capsys.readouterr().out


def test_gen_config(tmp_path, capsys):
    path = tmp_path / "config.json"
    assert run("gen-config", "--path", str(path)) == 0
    with open(path) as f:
        assert json.load(f)["sidelobe_db"] == 120.0
    assert str(path) in capsys.readouterr().out


def test_missing_ifs_exits_with_validation_code(tmp_path, caplog):
    assert run("-o", str(tmp_path), "bands", "--ifs", str(tmp_path / "missing.json")) == 2
    assert "IFS file not found" in caplog.text


def test_bad_level_and_eps(tmp_path):
    assert run("-o", str(tmp_path), "bands", "--ifs", "example1", "--n", "-1") == 2
    assert run("-o", str(tmp_path), "torus-limit", "--ifs", "example1", "--eps", "0.1,-1") == 2


def test_even_window_length_rejected(tmp_path):
    assert run("-o", str(tmp_path), "spectrum", "--ifs", "example1", "--window-len", "100") == 2


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("--config", str(bad), "-o", str(tmp_path), "bands", "--ifs", "example1") == 2


def test_equilibrium_needs_a_set(tmp_path, caplog):
    assert run("-o", str(tmp_path), "equilibrium") == 2
    assert "needs --ifs" in caplog.text


def _header(table) -> list:
    return [c["name"] for c in table["columns"]]


def test_spectrum(tmp_path, capsys):
    out = tmp_path / "out"
    argv = ["-o", str(out), "spectrum", "--ifs", "example1", "--n", "1", "--J", "600", "--L", "2", "--levels", "1"]
    assert run(*argv) == 0
    spectrum = read_csv_table(str(out / "spectrum_n1_L2.csv"))
    assert _header(spectrum) == ["k_1", "omega_k", "amplitude", "phase"]
    assert len(spectrum["dataset"]) == 3
    axis = read_csv_table(str(out / "axis_n1.csv"))
    assert extract_column(axis, "k_i") == [1.0, 2.0]
    principal = read_csv_table(str(out / "principal_n1.csv"))
    assert _header(principal) == ["index", "position", "gap_width", "angular_omega", "amplitude"]
    assert extract_column(principal, "gap_width") == pytest.approx([0.28])
    pairs = read_csv_table(str(out / "gap_amplitude.csv"))
    assert _header(pairs) == ["n", "i", "gap_width", "amplitude"]
    assert extract_column(pairs, "amplitude") == extract_column(principal, "amplitude")
    assert "correlation" in capsys.readouterr().out


def test_converge_iso(tmp_path):
    out = tmp_path / "out"
    argv = ["-o", str(out), "converge-iso", "--ifs", "example1", "--n", "1", "--J", "1200", "--L", "2", "--case", "both"]
    assert run(*argv) == 0
    for case in ("a", "b"):
        table = read_csv_table(str(out / f"converge_iso_{case}_n1.csv"))
        assert _header(table) == ["j", "b_mu", "b_theta", "diff"]
        assert len(table["dataset"]) == 1199
        assert extract_column(table, "j")[:3] == [1.0, 2.0, 3.0]


def test_converge_infty(tmp_path):
    out = tmp_path / "out"
    argv = ["-o", str(out), "converge-infty", "--ifs", "example1", "--n-max", "1", "--J", "300", "--L", "2"]
    assert run(*argv, "--eps", "1e-3") == 0
    slopes = read_csv_table(str(out / "slopes.csv"))
    assert _header(slopes) == ["n", "c_n", "d_n", "fit_start", "fit_end", "plateau"]
    stabilization = read_csv_table(str(out / "stabilization.csv"))
    assert _header(stabilization) == ["n", "exp_delta_n", "N_eps_0.001"]
    assert extract_column(stabilization, "n") == [1.0]
    balanced = read_csv_table(str(out / "balanced_jacobi.csv"))
    assert len(balanced["dataset"]) == 300
    diff = read_csv_table(str(out / "balanced_diff.csv"))
    assert len(diff["dataset"]) == 299


def test_torus_limit(tmp_path, capsys):
    out = tmp_path / "out"
    argv = ["-o", str(out), "torus-limit", "--ifs", "example1", "--n-max", "2", "--J", "64", "--eps", "1e-2"]
    assert run(*argv) == 0
    for n in (1, 2):
        assert len(read_csv_table(str(out / f"torus_limit_jacobi_n{n}.csv"))["dataset"]) == 64
    stabilization = read_csv_table(str(out / "torus_stabilization.csv"))
    assert _header(stabilization) == ["n", "max_diff", "N_eps_0.01"]
    assert extract_column(stabilization, "n") == [2.0]
    assert 0 <= extract_column(stabilization, "N_eps_0.01")[0] <= 63
    diff = read_csv_table(str(out / "torus_limit_diff.csv"))
    assert len(diff["dataset"]) == 63
    assert "max |b(theta_n) - b(theta_n-1)|" in capsys.readouterr().out
