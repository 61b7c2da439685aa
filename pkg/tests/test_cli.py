import csv
import io
import json
from pathlib import Path

from ecodyn import io as eio
from ecodyn.cli import main

ROOT = Path(__file__).resolve().parents[1]
TRANS = str(ROOT / "fixtures" / "trans.json")


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_help_exits_zero(capsys):
    code, out, _ = run(["--help"], capsys)
    assert code == 0 and "stoch-control" in out


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(["equilibria", "--params", TRANS, "--bogus"], capsys)
    assert code == 2 and "usage" in err


def test_equilibria_fixture(capsys):
    code, out, _ = run(["equilibria", "--params", TRANS], capsys)
    assert code == 0
    kinds = [e["kind"] for e in json.loads(out)]
    assert kinds[:3] == ["Trivial", "PredatorFree", "PreyFree"]


def test_missing_seed_for_stochastic_commands(capsys):
    code, _, _ = run(["sde", "--params", TRANS, "--x-target", "0.1"], capsys)
    assert code == 2
    code, _, _ = run(["stoch-control", "--params", TRANS], capsys)
    assert code == 2


def test_schema_violation_is_config_error(tmp_path, capsys):
    bad = tmp_path / "p.json"
    bad.write_text(json.dumps({"gamma": 1.0, "eps": 0.5, "delta": 8.0, "m": 6.0, "omega": 4.0, "beta": 1}))
    code, _, err = run(["equilibria", "--params", str(bad)], capsys)
    assert code == 2 and "beta" in err
    bad.write_text("{not json")
    assert run(["equilibria", "--params", str(bad)], capsys)[0] == 2


def test_domain_violation_is_config_error(tmp_path, capsys):
    bad = tmp_path / "p.json"
    bad.write_text(json.dumps({"gamma": 1.0, "eps": 0.5, "delta": 5.0, "m": 6.0, "omega": 4.0}))
    code, _, err = run(["equilibria", "--params", str(bad)], capsys)
    assert code == 2 and "delta" in err


def test_numeric_failure_exit_one(capsys):
    # one step is too few for a scan
    code, out, _ = run(["bifurcate", "--params", TRANS, "--vary", "xi", "--from", "2", "--to", "4",
                        "--steps", "1"], capsys)
    assert code == 1
    assert json.loads(out)["error"] == "numeric_failure"


def test_defaults_for_missing_food(tmp_path, capsys):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"gamma": 1.0, "eps": 0.5, "delta": 8.0, "m": 6.0, "omega": 4.0}))
    code, out, _ = run(["equilibria", "--params", str(p)], capsys)
    assert code == 0
    assert [e["kind"] for e in json.loads(out)] == ["Trivial", "PredatorFree"]


def test_simulate_csv_is_rfc4180(tmp_path, capsys):
    code, out, _ = run(["simulate", "--params", TRANS, "--x0", "0.5", "--y0", "0.5", "--t-end", "1",
                        "--dt", "0.1"], capsys)
    assert code == 0
    assert "\r\n" in out
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["t", "x", "y"] and len(rows) == 12


def _manifest_run(tmp_path, name, argv, capsys):
    out = tmp_path / name
    assert main(argv + ["--out", str(out)]) == 0
    capsys.readouterr()
    return json.loads((out / "manifest.json").read_text()), out


def test_manifest_reproducible(tmp_path, capsys):
    argv = ["sde", "--params", TRANS, "--x-target", "0.5", "--x0", "0.8", "--y0", "0.3", "--seed", "5",
            "--paths", "20", "--dt", "0.01", "--t-max", "2", "--record", "2"]
    m1, d1 = _manifest_run(tmp_path, "a", argv, capsys)
    m2, _ = _manifest_run(tmp_path, "b", argv + ["--workers", "2"], capsys)
    assert m1["outputs"] == m2["outputs"]
    assert m1["seed"] == 5 and m1["command"] == "sde"
    import jsonschema
    jsonschema.validate(m1, eio.schema("manifest"))
    for name, digest in m1["outputs"].items():
        assert eio.sha256_bytes((d1 / name).read_bytes()) == digest


def test_stats_round_trip(tmp_path, capsys):
    c = tmp_path / "c.csv"
    u = tmp_path / "u.csv"
    c.write_text(eio.to_csv(["path", "hitting_time", "censored"], [(i, 1.0 + 0.01 * i, False) for i in range(30)]))
    u.write_text(eio.to_csv(["path", "hitting_time", "censored"], [(i, 2.0 + 0.01 * i, i == 0) for i in range(30)]))
    code, out, _ = run(["stats", "--controlled", str(c), "--uncontrolled", str(u)], capsys)
    assert code == 0
    d = json.loads(out)
    assert d["stats_uncontrolled"]["censored_count"] == 1
    assert d["rank_test"]["p_value"] < 1e-8


def test_stats_missing_column(tmp_path, capsys):
    c = tmp_path / "c.csv"
    c.write_text("a,b\r\n1,2\r\n")
    assert run(["stats", "--controlled", str(c), "--uncontrolled", str(c)], capsys)[0] == 2


def test_other_commands_run(tmp_path, capsys):
    cmds = [
        ["nullclines", "--params", TRANS, "--samples", "5"],
        ["regions", "--params", TRANS, "--alpha-max", "1", "--xi-max", "4", "--resolution", "4"],
        ["control", "--params", TRANS, "--mode", "quality", "--x0", "0.5", "--y0", "0.5", "--xt", "0.5",
         "--yt", "0.5"],
        ["simulate", "--params", TRANS, "--x0", "0.5", "--y0", "0.5", "--t-end", "1", "--phase-grid", "3x3"],
    ]
    for argv in cmds:
        code, out, _ = run(argv, capsys)
        assert code == 0 and out


def test_stoch_control_small(tmp_path, capsys):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"gamma": 10.0, "eps": 0.1, "delta": 11.0, "m": 5.05, "omega": 0.1}))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_sweeps": 2, "n_train_paths": 10, "n_eval_paths": 30}))
    m, out = _manifest_run(tmp_path, "sc", ["stoch-control", "--params", str(p), "--config", str(cfg),
                                            "--seed", "3"], capsys)
    assert {"stoch_control.json", "hitting_controlled.csv", "hitting_uncontrolled.csv",
            "trajectories_controlled.csv", "ensemble_means.csv"} <= set(m["outputs"])
    res = json.loads((out / "stoch_control.json").read_text())
    assert res["baseline"] == [1.0, 1.0] and "rank_test" in res


def test_repro_fast_case(capsys):
    code, out, err = run(["repro", "saddle-node"], capsys)
    assert code == 0
    assert json.loads(out)["passed"]
    assert "FAIL" not in err
