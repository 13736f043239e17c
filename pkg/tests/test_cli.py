import json

import pytest

from convbandits.cli import main

from conftest import FIXTURE_TAGS


def _gen_env(tmp_path, **extra):
    out = tmp_path / "env.json"
    args = ["gen", "--arms", "40", "--keyterms", "12", "--dim", "4",
            "--users", "2", "--pool-size", "8", "--seed", "3",
            "--out", str(out)]
    for key, value in extra.items():
        args.extend([f"--{key}", str(value)])
    assert main(args) == 0
    return out


def test_gen_writes_artifact(tmp_path, capsys):
    out = _gen_env(tmp_path)
    data = json.loads(out.read_text())
    assert data["dim"] == 4
    assert len(data["arms"]) == 40
    assert data["spanner"] is not None
    assert "wrote environment artifact" in capsys.readouterr().out


def test_spanner_subcommand(tmp_path, capsys):
    env_path = _gen_env(tmp_path)
    out_path = tmp_path / "env_span.json"
    assert main(["spanner", "--env", str(env_path), "--c", "1.1",
                 "--out", str(out_path)]) == 0
    printed = capsys.readouterr().out
    assert "verified: True" in printed
    assert json.loads(out_path.read_text())["spanner"]["approx_c"] == 1.1


def test_run_subcommand_and_determinism(tmp_path):
    env_path = _gen_env(tmp_path)
    cfg = {
        "environment": {"artifact": str(env_path)},
        "algorithms": [
            {"kind": "LinUCB"},
            {"kind": "ConLinUCB-BS"},
            {"kind": "ConLinUCB-MCR"},
        ],
        "horizon": 50,
        "schedule": {"mode": "log_floor", "rate": 5.0},
        "num_runs": 2,
        "base_seed": 11,
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    out_a, out_b = tmp_path / "out_a", tmp_path / "out_b"
    assert main(["run", "--config", str(cfg_path), "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(cfg_path), "--out", str(out_b)]) == 0
    assert ((out_a / "regret_curves.csv").read_bytes()
            == (out_b / "regret_curves.csv").read_bytes())
    manifest = json.loads((out_a / "manifest.json").read_text())
    assert manifest["base_seed"] == 11
    assert (out_a / "summary.csv").exists()

    # seed override changes the curves
    out_c = tmp_path / "out_c"
    assert main(["run", "--config", str(cfg_path), "--out", str(out_c),
                 "--seed", "12"]) == 0
    assert ((out_a / "regret_curves.csv").read_bytes()
            != (out_c / "regret_curves.csv").read_bytes())


def test_run_requires_out_dir(tmp_path, capsys):
    env_path = _gen_env(tmp_path)
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps({
        "environment": {"artifact": str(env_path)},
        "algorithms": [{"kind": "LinUCB"}],
        "horizon": 5,
        "schedule": {"mode": "log_floor", "rate": 5.0},
    }))
    assert main(["run", "--config", str(cfg_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_bounds_subcommand(tmp_path):
    out = tmp_path / "bounds.csv"
    assert main(["bounds", "--out", str(out), "--points", "10",
                 "--t-min", "10", "--t-max", "10000"]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "T,bound_spanner,bound_mcr,bound_conucb"
    assert len(lines) > 5


def test_prep_subcommand(tmp_path):
    out = tmp_path / "real_env.json"
    assert main(["prep", "--data", FIXTURE_TAGS, "--source", "lastfm",
                 "--arms", "40", "--users", "30", "--max-tags-per-arm", "10",
                 "--dim", "6", "--pool-size", "10", "--seed", "2",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["provenance"]["kind"] == "hetrec"
    assert len(data["users"]) == 30


def test_invalid_input_exits_nonzero(tmp_path, capsys):
    assert main(["gen", "--arms", "10", "--keyterms", "5", "--dim", "3",
                 "--users", "1", "--pool-size", "50",
                 "--out", str(tmp_path / "x.json")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["prep", "--data", str(tmp_path / "missing.dat"),
                 "--source", "lastfm", "--arms", "5", "--users", "5",
                 "--out", str(tmp_path / "y.json")]) == 2


def test_check_coverage_suite(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    assert main(["check", "--suite", "coverage", "--seed", "7",
                 "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["coverage"]["pass"] is True
    assert "coverage" in capsys.readouterr().out
