import glob
import json
import os
import subprocess
import sys

import pytest

from stochwave.cli import (DEFAULTS, ConfigError, config_hash, main, parse_config_text,
                           validate_config)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out.strip().splitlines()[-1]) if code == 0 else None), err


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("cli"))
    assert main(["wave", "--out", d, "--no-probe"]) == 0
    assert main(["modwave", "--out", d, "--sigma", "0.05"]) == 0
    assert main(["modwave", "--out", d, "--sigma", "0"]) == 0
    return d


def test_wave_happy_path(capsys, tmp_path):
    code, out, _ = run(capsys, "wave", "--model", "nagumo", "--a", "0.3", "--out", str(tmp_path))
    assert code == 0
    assert os.path.exists(out["wave"])
    assert len(glob.glob(str(tmp_path / "wave_*.manifest.json"))) == 1
    assert out["c0"] == pytest.approx(-0.2 * 2 ** 0.5, abs=1e-3)
    assert out["beta_gap"] >= 0.25


def test_threshold_out_of_range(capsys, tmp_path):
    code, _, err = run(capsys, "wave", "--a", "1.5", "--out", str(tmp_path))
    assert code == 1 and "a=1.5" in err


def test_malformed_config_names_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model = nagumo\nsigmaa = 0.1\n")
    code, _, err = run(capsys, "wave", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 1 and "sigmaa" in err
    cfg.write_text("dx = fine\n")
    code, _, err = run(capsys, "wave", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 1 and "dx" in err


def test_missing_inputs(capsys, tmp_path):
    code, _, err = run(capsys, "wave", "--config", str(tmp_path / "nope.cfg"))
    assert code == 3
    code, _, err = run(capsys, "modwave", "--out", str(tmp_path / "empty"))
    assert code == 3 and "stochwave wave" in err


def test_usage_errors_are_config_errors(capsys):
    assert run(capsys, "wave", "--bogus-flag", "1")[0] == 1
    assert run(capsys, "wave", "--workers", "0")[0] == 1


def test_numerical_failure_exit_code(capsys, outdir):
    code, _, err = run(capsys, "modwave", "--out", outdir, "--noise", "nagumo_quadratic",
                       "--sigma", "5")
    assert code == 2 and "FixedPointError" in err


def test_config_file_and_hash_order():
    a = parse_config_text("# comment\nsigma = 0.1\nmodel: nagumo\nT = 5\n")
    b = parse_config_text("T = 5\nmodel = nagumo   # trailing\nsigma = 0.1\n")
    full_a = validate_config(dict(DEFAULTS, **a))
    full_b = validate_config(dict(DEFAULTS, **b))
    assert config_hash(full_a) == config_hash(full_b)
    assert config_hash(full_a) != config_hash(dict(full_a, sigma=0.2))
    with pytest.raises(ConfigError):
        parse_config_text("sigma = 0.1\nsigma = 0.2\n")
    with pytest.raises(ConfigError):
        parse_config_text("just words\n")


def test_simulate_zero_noise(capsys, outdir):
    code, out, _ = run(capsys, "simulate", "--out", outdir, "--sigma", "0", "--u0", "wave")
    assert code == 0
    assert out["supN"] <= 1e-4 and not out["exited"]
    with open(out["series"]) as fh:
        assert fh.readline().strip() == "t,Gamma,N1,N2,tau_Phi,l2_V,h1_V"


def test_ensemble_byte_identical(capsys, outdir, tmp_path):
    import shutil
    other = str(tmp_path / "copy")
    shutil.copytree(outdir, other)
    code, a, _ = run(capsys, "ensemble", "--out", outdir, "--paths", "100", "--seed", "42",
                     "--T", "2")
    assert code == 0
    code, b, _ = run(capsys, "ensemble", "--out", other, "--paths", "100", "--seed", "42",
                     "--T", "2")
    assert code == 0
    with open(a["jsonl"], "rb") as f1, open(b["jsonl"], "rb") as f2:
        assert f1.read() == f2.read()
    ja, jb = a["jsonl"].replace(".jsonl", ".json"), b["jsonl"].replace(".jsonl", ".json")
    with open(ja, "rb") as f1, open(jb, "rb") as f2:
        assert f1.read() == f2.read()
    lines = open(a["jsonl"]).read().splitlines()
    assert len(lines) == 100 and json.loads(lines[0])["seed"] == 42


def test_artifacts_never_mutated(capsys, outdir):
    code, a, _ = run(capsys, "ensemble", "--out", outdir, "--paths", "5", "--seed", "1",
                     "--T", "1")
    before = open(a["jsonl"], "rb").read()
    stamp = os.stat(a["jsonl"]).st_mtime_ns
    manifests = set(glob.glob(os.path.join(outdir, "ensemble_*.manifest.json")))
    code, b, _ = run(capsys, "ensemble", "--out", outdir, "--paths", "5", "--seed", "1",
                     "--T", "1")
    assert os.stat(a["jsonl"]).st_mtime_ns == stamp and open(a["jsonl"], "rb").read() == before
    code, c, _ = run(capsys, "ensemble", "--out", outdir, "--paths", "5", "--seed", "2",
                     "--T", "1")
    assert c["jsonl"] != a["jsonl"]
    new = set(glob.glob(os.path.join(outdir, "ensemble_*.manifest.json"))) - manifests
    assert len(new) == 1
    man = json.load(open(new.pop()))
    assert man["seed"] == 2 and man["outputs"]


def test_speed_special_case(capsys, outdir):
    assert main(["modwave", "--out", outdir, "--sigma", "0.05", "--special-case"]) == 0
    capsys.readouterr()
    code, out, _ = run(capsys, "speed", "--out", outdir, "--sigma", "0.05", "--special-case")
    assert code == 0 and out["c_inf_2"] == out["c_sigma"]


def test_workers_env(capsys, outdir, monkeypatch):
    monkeypatch.setenv("STOCHWAVE_WORKERS", "1")
    code, out, _ = run(capsys, "ensemble", "--out", outdir, "--paths", "3", "--T", "1",
                       "--seed", "9")
    assert code == 0 and out["workers"] == 1


def test_experiment_command_and_reuse(capsys, tmp_path):
    args = ["experiment", "steepening", "--out", str(tmp_path), "--sweep", "sigma=0,0.1,0.2"]
    code, out, _ = run(capsys, *args)
    assert code == 0 and out["checks"]["slope_monotone"]
    assert os.path.exists(os.path.join(out["dir"], "manifest.json"))
    code, again, _ = run(capsys, *args)
    assert again["reused"] and again["dir"] == out["dir"]
    assert run(capsys, "experiment", "nonsense", "--out", str(tmp_path))[0] == 1
    assert run(capsys, "experiment", "steepening", "--out", str(tmp_path),
               "--sweep", "sigma")[0] == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stochwave", "wave", "--a", "2",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1 and "configuration error" in proc.stderr
