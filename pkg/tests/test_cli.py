import json

import pytest

from capwalk import cli
from capwalk.deviation_lab import ConfigError


def run(tmp_path, *argv):
    return cli.run([*argv, "--out", str(tmp_path)])


def manifest(tmp_path):
    return json.loads((tmp_path / "manifest.json").read_text())


def test_reduce_enumerate_m2(tmp_path, capsys):
    assert run(tmp_path, "reduce", "enumerate", "--m", "2") == cli.EXIT_OK
    assert "6 certificates, 0 failures" in capsys.readouterr().out
    certs = json.loads((tmp_path / "certificates.json").read_text())
    assert len(certs) == 6
    m = manifest(tmp_path)
    assert m["exit_code"] == 0 and m["version"] and str(tmp_path / "reduce.json") in m["outputs"]


def test_reduce_replay_roundtrip_and_tamper(tmp_path):
    assert run(tmp_path, "reduce", "enumerate", "--phi", "1,2,1,2") == 0
    cert = json.loads((tmp_path / "certificates.json").read_text())[0]
    good = tmp_path / "good.json"
    good.write_text(json.dumps(cert))
    assert run(tmp_path, "reduce", "replay", "--certificate", str(good)) == cli.EXIT_OK
    cert["steps"][0]["factor"]["exponent"] = "2"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cert))
    assert run(tmp_path, "reduce", "replay", "--certificate", str(bad)) == cli.EXIT_FAIL
    assert "does not replay" in manifest(tmp_path)["error"]


def test_reduce_usage_errors(tmp_path):
    assert run(tmp_path, "reduce", "enumerate") == cli.EXIT_USAGE
    assert run(tmp_path, "reduce", "enumerate", "--phi", "1,2,1") == cli.EXIT_USAGE
    assert run(tmp_path, "reduce", "enumerate", "--phi", "a,b") == cli.EXIT_USAGE


def test_unknown_flag_is_usage_error(tmp_path):
    assert run(tmp_path, "rates", "--i5", "--bogus") == cli.EXIT_USAGE
    assert cli.run(["nonsense"]) == cli.EXIT_USAGE


def test_rates_output(tmp_path, capsys):
    assert run(tmp_path, "rates", "--i5", "--i4", "--identities") == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "I_5 = " in out and "time_legendre" in out
    res = json.loads((tmp_path / "rates.json").read_text())
    assert res["I5"] == pytest.approx(0.5 * 5 ** (-5 / 3))
    assert all(r["relative_error"] < 1e-8 for r in res["identities"])


def test_rates_needs_a_selection(tmp_path):
    assert run(tmp_path, "rates") == cli.EXIT_USAGE
    assert run(tmp_path, "rates", "--i5", "--lambda", "-1") == cli.EXIT_USAGE


def test_green_check(tmp_path, capsys):
    assert run(tmp_path, "green", "check", "--dim", "5") == cli.EXIT_OK
    assert "max harmonic residual" in capsys.readouterr().out
    g = json.loads((tmp_path / "green.json").read_text())
    assert g["harmonic_residual"] < 1e-6


def test_cap_of_single_point(tmp_path, capsys):
    assert run(tmp_path, "cap", "--n", "0", "--replicates", "2000", "--method", "both") == 0
    res = json.loads((tmp_path / "cap.json").read_text())
    assert abs(res["escape"]["cap"] - res["exact"]) < 5 * res["escape"]["stderr"] + 0.01
    assert "1/G_D(0)" in capsys.readouterr().out


def test_chi_decompose_xyzw(tmp_path):
    assert run(tmp_path, "chi", "--n", "64", "--b", "2", "--replicates", "2") == 0
    assert run(tmp_path, "decompose", "--n", "64", "--level", "2", "--replicates", "2") == 0
    d = json.loads((tmp_path / "decompose.json").read_text())
    assert d["telescoping_residual"] == "0" and d["epsilon_residual"] == "0"
    assert run(tmp_path, "xyzw", "--n", "16", "--level", "1") == 0
    assert set(json.loads((tmp_path / "xyzw.json").read_text())) >= {"X", "Y", "Z", "W"}


def test_oracle_sweep_writes_constants(tmp_path):
    assert run(tmp_path, "oracle", "sweep", "--kind", "displacement", "--t-max", "16", "--x-max", "2") == 0
    text = (tmp_path / "constants.csv").read_text().splitlines()
    assert text[0] == "rule_id,sweep,max_ratio,argmax" and len(text) == 2


def test_deviate_with_config(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"dim": 5, "n": [32, 64], "replicates": 100, "seed": 5,
                               "statistic": "cap", "b_n": "sqrt(log n)"}))
    assert run(tmp_path, "deviate", "--config", str(cfg)) == 0
    res = json.loads((tmp_path / "results.json").read_text())
    assert res["config"]["b_n"] == "sqrt(log n)"
    rows = (tmp_path / "results.csv").read_text().splitlines()
    assert rows[0] == "n,statistic,value,stderr"
    m = manifest(tmp_path)
    assert m["seed"] == 5 and m["runtime_s"] > 0 and m["config"]["experiment"]["n"] == [32, 64]


def test_deviate_bad_config_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"dim": 5, "n": [32], "replicates": 50, "seed": 5}))
    assert run(tmp_path, "deviate", "--config", str(cfg)) == cli.EXIT_USAGE
    assert "config.replicates" in capsys.readouterr().err
    assert "config.replicates" in manifest(tmp_path)["error"]
    assert run(tmp_path, "deviate") == cli.EXIT_USAGE


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dim": 4, "n": [100], "replicates": 100, "seed": 0}))
    assert cli.load_config(p).dim == 4
    p.write_text(json.dumps({"dim": 4, "n": [100], "replicates": 100, "seed": 0, "extra": 1}))
    with pytest.raises(ConfigError, match="config.extra"):
        cli.load_config(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        cli.load_config(p)
    with pytest.raises(ConfigError, match="not found"):
        cli.load_config(tmp_path / "missing.json")


def test_check_criterion(tmp_path, capsys):
    assert run(tmp_path, "check", "--criterion", "6") == cli.EXIT_OK
    assert "criterion  6 PASS" in capsys.readouterr().out
    assert json.loads((tmp_path / "criterion_6.json").read_text())["passed"]


def test_manifest_written_when_a_check_fails(tmp_path, monkeypatch):
    from capwalk import acceptance

    def failing(**kw):
        return acceptance.CriterionResult(6, "forced", False, {})

    monkeypatch.setitem(acceptance.CRITERIA, 6, failing)
    assert run(tmp_path, "check", "--criterion", "6") == cli.EXIT_FAIL
    m = manifest(tmp_path)
    assert m["exit_code"] == 1 and "criterion 6 failed" in m["error"]


def test_version_flag(capsys):
    assert cli.run(["--version"]) == cli.EXIT_OK
    assert "capwalk" in capsys.readouterr().out
