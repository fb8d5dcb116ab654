import csv
import json
import os
import subprocess
import sys

import pytest

from slowfast import backend
from slowfast.errors import BlowUpError, ConfigValidationError
from slowfast.harness import run as run_mod
from slowfast.harness.cli import main
from slowfast.harness.config import ExperimentConfig, config_from_mapping, load_config, parse_config_text
from slowfast.harness.run import fmt, run_experiment, sha256_file

SMALL = {
    "seed": 7,
    "scale.epsilons": [0.5, 0.25, 0.125],
    "estimator.n0": 400,
    "ergodic.x_points": [0.0],
    "ergodic.burn_in": 1.0,
    "ergodic.horizon": 5.0,
    "ergodic.n_paths": 50,
    "mixing.horizon": 2.0,
    "mixing.n_paths": 20,
    "expansion.epsilons": [0.5, 0.25],
    "expansion.n": 300,
    "run.experiments": ["check", "abar", "mixing", "strong-rate", "expansion"],
}


def small(tmp_path, **extra):
    return config_from_mapping({**SMALL, "output.dir": str(tmp_path), **extra})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- configuration -----------------------------------------------------------

def test_flat_and_json_configs_agree(tmp_path):
    text = """
    # comment
    model.name = jump_ou
    model.kappa = 0.3
    seed = 11
    scale.epsilons = [0.5, 0.25, 0.125]
    estimator.n0 = 1000
    run.experiments = weak-rate, strong-rate
    output.dir = out
    """
    flat = parse_config_text(text)
    nested = parse_config_text(json.dumps({
        "model": {"name": "jump_ou", "kappa": 0.3},
        "seed": 11,
        "scale": {"epsilons": [0.5, 0.25, 0.125]},
        "estimator": {"n0": 1000},
        "run": {"experiments": ["weak-rate", "strong-rate"]},
        "output": {"dir": "out"},
    }))
    assert flat == nested
    assert flat.validate().resolved_params()["kappa"] == 0.3
    p = tmp_path / "cfg.txt"
    p.write_text(text)
    assert load_config(p) == flat


def test_defaults_resolve():
    cfg = ExperimentConfig().validate()
    echo = cfg.echo()
    assert echo["scale.dt"] == pytest.approx(0.1 * 2**-8)
    assert echo["estimator.eps0"] == 0.125
    assert echo["model.gamma"] == 1.0
    assert echo["scale.epsilons"] == [2.0**-k for k in range(3, 9)]


@pytest.mark.parametrize("mapping, field", [
    ({"scale.epsilons": [-0.1]}, "epsilons"),
    ({"scale.epsilons": [0.5, 0.5]}, "epsilons"),
    ({"scale.epsilons": [2.0]}, "epsilons"),
    ({"expansion.epsilons": [0.0]}, "expansion.epsilons"),
    ({"scale.T": 0}, "scale.T"),
    ({"estimator.n0": 1}, "estimator.n0"),
    ({"model.lambda9": 1.0}, "model.lambda9"),
    ({"model.name": "lorenz"}, "model.name"),
    ({"run.experiments": ["dance"]}, "run.experiments"),
    ({"seed": -3}, "seed"),
    ({"observable": "cube"}, "observable"),
])
def test_validation_names_the_field(mapping, field):
    with pytest.raises(ConfigValidationError) as info:
        config_from_mapping(mapping).validate()
    assert info.value.field == field
    assert info.value.exit_code == 2


def test_parse_errors_name_the_key():
    with pytest.raises(ConfigValidationError) as info:
        config_from_mapping({"nonsense.key": 1})
    assert info.value.field == "nonsense.key"
    with pytest.raises(ConfigValidationError) as info:
        config_from_mapping({"estimator.n0": "many"})
    assert info.value.field == "estimator.n0"
    with pytest.raises(ConfigValidationError):
        parse_config_text("seed 4")


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ConfigValidationError) as info:
        run_experiment(small(tmp_path / "file" / "sub"))
    assert info.value.field == "output.dir"


# --- runs ------------------------------------------------------------------------

def test_full_small_run(tmp_path):
    m = run_experiment(small(tmp_path))
    assert m.status == "complete" and not m.failures
    names = set(m.digests())
    assert names == {"check.json", "abar.csv", "mixing.csv", "mixing_fit.json", "strong_rate.csv",
                     "strong_rate.dat", "strong_fit.json", "expansion.csv"}
    on_disk = set(os.listdir(tmp_path))
    assert on_disk == names | {"manifest.json"}
    # digests match the files, and the persisted manifest matches the returned one
    for name, digest in m.digests().items():
        assert sha256_file(tmp_path / name) == digest
    persisted = json.loads((tmp_path / "manifest.json").read_text())
    assert persisted["files"] == json.loads(m.to_json())["files"]
    assert persisted["status"] == "complete"
    assert persisted["config"]["seed"] == 7 and persisted["backend"] == backend.name()


def test_output_formats(tmp_path):
    run_experiment(small(tmp_path))
    rows = read_csv(tmp_path / "abar.csv")
    assert rows[0] == ["x", "abar_estimate", "stderr", "abar_analytic", "n_paths", "horizon"]
    assert float(rows[1][3]) == 1.2
    rows = read_csv(tmp_path / "strong_rate.csv")
    assert rows[0] == ["epsilon", "error", "stderr", "n", "dt", "seed"]
    assert [float(r[0]) for r in rows[1:]] == [0.5, 0.25, 0.125]
    assert all(r[5] == "7" and float(r[4]) == 0.0125 for r in rows[1:])
    fit = json.loads((tmp_path / "strong_fit.json").read_text())
    assert {"slope", "intercept", "r_squared", "ci_low", "ci_high", "excluded_points"} <= set(fit)
    header = read_csv(tmp_path / "expansion.csv")[0]
    assert {"epsilon", "u_eps", "u_bar", "u1_hat", "r_eps", "S", "tail_bound"} <= set(header)
    dat = (tmp_path / "strong_rate.dat").read_text().splitlines()
    assert dat[0].startswith("# log10_epsilon")
    assert len(dat) == 4


def test_numbers_round_trip():
    for v in (0.1, 1 / 3, 2.0**-40, 1e300, -0.0):
        assert float(fmt(v)) == v
    assert fmt(None) == "" and fmt(True) == "true" and fmt(3) == "3"


def test_reruns_are_byte_identical(tmp_path):
    a = run_experiment(small(tmp_path / "a"))
    b = run_experiment(small(tmp_path / "b", **{"run.threads": 3}))
    assert a.digests() == b.digests()


def test_every_file_is_traceable(tmp_path):
    m = run_experiment(small(tmp_path))
    ops = {"check_assumptions", "estimate_abar", "estimate_mixing_rate", "strong_error", "fit_rate",
           "residual_check"}
    for entry in m.files:
        assert entry["operation"] in ops
        assert isinstance(entry["params"], dict) and entry["params"]
    assert m.config["estimator.strong_n"] == 400


def test_minimal_weak_run_records_insufficient_data(tmp_path):
    cfg = config_from_mapping({"scale.epsilons": [0.25], "estimator.n0": 100, "run.experiments": ["weak-rate"],
                               "output.dir": str(tmp_path)})
    m = run_experiment(cfg)
    assert set(m.digests()) == {"weak_rate.csv", "weak_rate.dat", "weak_fit.json"}
    assert m.status == "insufficient_data"
    assert m.failures[0]["experiment"] == "weak-rate"
    fit = json.loads((tmp_path / "weak_fit.json").read_text())
    assert "error" in fit and len(fit["excluded_points"]) <= 1


def test_interrupted_write_leaves_partial(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = os.replace

    def flaky(src, dst):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return real(src, dst)

    monkeypatch.setattr(run_mod.os, "replace", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_experiment(small(tmp_path))
    files = set(os.listdir(tmp_path))
    assert "check.json" in files
    assert "abar.csv.partial" in files and "abar.csv" not in files
    assert "manifest.json" not in files


def test_blow_up_writes_failed_manifest(tmp_path):
    cfg = small(tmp_path, **{"start.x": 5e12, "run.experiments": ["strong-rate"]})
    with pytest.raises(BlowUpError):
        run_experiment(cfg)
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["status"] == "failed"
    assert m["failures"][0]["error"] == "BlowUpError" and m["failures"][0]["sample"] == 0


# --- command line -------------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    base = ["--out", str(tmp_path / "o"), "-q"]
    assert main(["check", *base]) == 0
    assert json.loads((tmp_path / "o" / "check.json").read_text())["ok"] is True
    assert main(["weak-rate", *base, "--set", "scale.epsilons=[-0.1]"]) == 2
    assert "epsilons" in capsys.readouterr().err
    assert main(["strong-rate", *base, "--set", "start.x=5e12", "--set", "estimator.n0=10",
                 "--set", "scale.epsilons=[0.5,0.25,0.125]"]) == 3
    assert main(["weak-rate", *base, "--set", "scale.epsilons=[0.25]", "--set", "estimator.n0=50"]) == 4
    assert main(["run", *base, "--set", "bogus"]) == 2


def test_cli_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**SMALL, "run.experiments": ["strong-rate"]}))
    out = tmp_path / "r"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--seed", "9", "--threads", "2"]) == 0
    printed = capsys.readouterr().out
    assert "strong: slope" in printed
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["seed"] == 9 and m["config"]["run.threads"] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "slowfast.harness", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("check", "abar", "mixing", "weak-rate", "strong-rate", "expansion", "run"):
        assert sub in proc.stdout


def test_thread_env_default(monkeypatch):
    monkeypatch.setenv("SLOWFAST_THREADS", "3")
    assert backend.default_threads() == 3
