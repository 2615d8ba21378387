import csv
import json

import numpy as np
import pytest

from heatcost.cli import fmt, main
from heatcost.config import DEFAULTS, load_config, parse_config_text
from heatcost.errors import ValidationError

SMALL = {
    "eig": ["n_interior=63"],
    "spectral-probe": ["n_interior=127", "delta_grid=0.05,0.1,0.2"],
    "observability": ["n_interior=127", "delta_grid=0.1,0.2"],
    "cost-curve": ["n_interior=63", "n_modes=30", "omega=interval:0.3,0.6", "delta_grid=0.05,0.1",
                   "T_grid=0.5,0.35,0.25"],
    "synthesize": ["n_interior=63", "n_modes=30", "omega=interval:0.3,0.6", "T_grid=0.5,0.25",
                   "cn_steps=512", "cn_tol=1e-3"],
    "three-sphere": ["h=0.03125", "n_samples=20"],
}
OUTPUT = {
    "eig": "eigendata.csv",
    "spectral-probe": "spectral_probe.csv",
    "observability": "observability.csv",
    "cost-curve": "cost_curve.csv",
    "synthesize": "synthesize.csv",
    "three-sphere": "three_sphere.csv",
}


def run_cli(experiment, out, extra=(), config=None):
    argv = [experiment, "--out", str(out), "--check"]
    if config is not None:
        argv += ["--config", str(config)]
    for item in list(SMALL[experiment]) + list(extra):
        argv += ["--set", item]
    return main(argv)


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


@pytest.mark.parametrize("experiment", list(SMALL))
def test_subcommand_runs_and_is_deterministic(tmp_path, experiment):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(experiment, a) == 0
    assert run_cli(experiment, b) == 0
    name = OUTPUT[experiment]
    assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["experiment"] == experiment
    assert all(c["ok"] for c in man["checks"].values())
    assert len(man["config_hash"]) == 64
    with open(a / name) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) > 1 and all(len(r) == len(rows[0]) for r in rows)


def test_observability_rows_carry_T(tmp_path):
    assert run_cli("observability", tmp_path) == 0
    with open(tmp_path / "observability.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {float(r["T"]) for r in rows} == {float(DEFAULTS["observability_T"])}


def test_validation_error_exit_code(tmp_path, capsys):
    assert run_cli("cost-curve", tmp_path, ["T_grid="]) == 2
    err = last_error(capsys)
    assert err["error"] == "validation" and "T_grid" in err["message"]
    assert run_cli("eig", tmp_path, ["no_such_key=1"]) == 2
    assert last_error(capsys)["error"] == "validation"
    assert run_cli("spectral-probe", tmp_path, ["omega=interval:x,y"]) == 2
    assert run_cli("synthesize", tmp_path, ["T_grid=1.5"]) == 2
    assert main(["eig", "--out", str(tmp_path), "--set", "novalue"]) == 2


def test_control_error_exit_code(tmp_path, capsys):
    assert run_cli("synthesize", tmp_path, ["tol=1e-40"]) == 5
    assert last_error(capsys)["error"] == "control"


def test_check_failure_exit_code(tmp_path, capsys):
    # the cost curve tolerates any residual while building rows; the check enforces tol
    assert run_cli("cost-curve", tmp_path, ["tol=1e-40"]) == 4
    assert last_error(capsys)["error"] == "check"
    assert (tmp_path / "cost_curve.csv").exists()  # outputs are written before the check


def test_include_and_override(tmp_path):
    base = tmp_path / "base.cfg"
    base.write_text("# base\nn_interior = 31\nomega = interval:0.2,0.4\n")
    child = tmp_path / "child.cfg"
    child.write_text("include = base.cfg\nexperiment = eig\nn_interior = 47\n")
    cfg = load_config(child)
    assert cfg.experiment == "eig"
    assert cfg.n_interior == 47
    assert cfg.get("omega") == "interval:0.2,0.4"
    cfg2 = load_config(child, overrides={"n_interior": "15"})
    assert cfg2.n_interior == 15 and cfg2.digest != cfg.digest
    assert run_cli("eig", tmp_path / "out", config=child) == 0
    rows = (tmp_path / "out" / "eigendata.csv").read_text().splitlines()
    assert len(rows) == 64  # the SMALL override n_interior=63 wins over the file


def test_include_cycle_and_mismatch(tmp_path):
    a, b = tmp_path / "a.cfg", tmp_path / "b.cfg"
    a.write_text("include = b.cfg\n")
    b.write_text("include = a.cfg\n")
    with pytest.raises(ValidationError):
        load_config(a, "eig")
    c = tmp_path / "c.cfg"
    c.write_text("experiment = eig\n")
    with pytest.raises(ValidationError):
        load_config(c, "cost-curve")
    with pytest.raises(ValidationError):
        load_config(None, None)


def test_parse_config_text():
    assert parse_config_text("a = 1 # c\n\n# x\nb=2") == {"a": "1", "b": "2"}
    with pytest.raises(ValidationError):
        parse_config_text("nonsense")


def test_fmt():
    assert fmt(0.1) == "1.0000000000000001e-01"
    assert fmt(3) == "3"
    assert fmt(True) == "1"
    assert fmt(np.inf) == "inf"
    assert fmt("Omega") == "Omega"
    assert float(fmt(np.pi)) == np.pi


def test_eig_csv_matches_closed_form_spectrum(tmp_path):
    from conftest import exact_dirichlet_eigenvalues
    assert run_cli("eig", tmp_path) == 0
    with open(tmp_path / "eigendata.csv") as fh:
        rows = list(csv.DictReader(fh))
    lam = np.array([float(r["lambda"]) for r in rows])
    np.testing.assert_allclose(lam, exact_dirichlet_eigenvalues(63), rtol=1e-10)
