import json

import pytest

from simident import cli, stats_io

FAST = ["--n", "100", "--k", "2", "--epochs", "2", "--batch-size", "25"]


def test_catalog_list(capsys):
    assert cli.main(["catalog", "list"]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("19 entries")
    assert "confounded" in out and "ground_truth=NotID" in out


def test_unknown_family_is_config_error(tmp_path):
    assert cli.main(["run", "--design", "iv", "--family", "cubic", "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--design", "backdoor", "--family", "gp",
                     "--out", str(tmp_path)]) == 2


def test_argparse_error_and_missing_options(tmp_path):
    assert cli.main(["nonsense"]) == 2
    assert cli.main(["run", "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--design", "iv", "--family", "linear", "--k", "1",
                     "--out", str(tmp_path)]) == 2


def test_read_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nseed = 4\nfamilies = linear, quadratic  # trailing\n"
                 "distances = 0.1,0.5\nsingle-instance = yes\n")
    assert cli.read_config(str(p)) == {"seed": 4, "families": ["linear", "quadratic"],
                                       "distances": [0.1, 0.5], "single_instance": True}
    p.write_text("bogus = 1\n")
    with pytest.raises(cli.ConfigError):
        cli.read_config(str(p))
    p.write_text("n = many\n")
    with pytest.raises(cli.ConfigError):
        cli.read_config(str(p))
    with pytest.raises(cli.ConfigError):
        cli.read_config(str(tmp_path / "missing.cfg"))


def test_flags_override_config_and_seed_fallback(tmp_path, monkeypatch):
    p = tmp_path / "c.cfg"
    p.write_text("n = 10\nk = 3\n")
    args = cli.build_parser().parse_args(["run", "--config", str(p), "--k", "4"])
    monkeypatch.setenv("SBI_SEED", "11")
    opts = cli.resolve(args)
    assert (opts["n"], opts["k"], opts["seed"]) == (10, 4, 11)
    args = cli.build_parser().parse_args(["run", "--seed", "2"])
    assert cli.resolve(args)["seed"] == 2
    monkeypatch.delenv("SBI_SEED")
    assert cli.resolve(cli.build_parser().parse_args(["run"]))["seed"] == 0
    monkeypatch.setenv("SBI_SEED", "x")
    with pytest.raises(cli.ConfigError):
        cli.resolve(cli.build_parser().parse_args(["run"]))


def test_run_writes_outputs_and_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["run", "--design", "unconfounded", "--family", "linear", "--seed", "3",
                         "--out", str(out)] + FAST) == 0
    for name in ("run_unconfounded_linear.json", "run_unconfounded_linear.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = stats_io.rows_from_csv((a / "run_unconfounded_linear.csv").read_text())
    assert rows[0].k == 2 and rows[0].seed == 3
    rep = json.loads((a / "run_unconfounded_linear.json").read_text())
    assert rep["config"]["optim"]["epochs"] == 2


def test_batch_larger_than_n_rejected(tmp_path):
    assert cli.main(["run", "--design", "iv", "--family", "linear", "--n", "10",
                     "--batch-size", "30", "--out", str(tmp_path)]) == 2


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    from simident import sbi

    def boom(*a, **k):
        raise RuntimeError("all trials failed")

    monkeypatch.setattr(sbi, "run", boom)
    assert cli.main(["run", "--design", "iv", "--family", "linear", "--out", str(tmp_path)]
                    + FAST) == 1


def test_table_and_sweep_commands(tmp_path):
    assert cli.main(["table", "--families", "linear", "--designs", "unconfounded,rdd",
                     "--out", str(tmp_path)] + FAST) == 0
    rows = stats_io.rows_from_csv((tmp_path / "table_all_linear.csv").read_text())
    assert [r.design for r in rows] == ["unconfounded", "rdd"]
    assert cli.main(["table", "--families", "cubic", "--out", str(tmp_path)]) == 2
    assert cli.main(["table", "--k", "1", "--out", str(tmp_path)]) == 2
    assert cli.main(["rdd-sweep", "--family", "linear", "--distances", "0.5,0.1",
                     "--out", str(tmp_path)] + FAST) == 0
    sweep = stats_io.sweep_from_csv((tmp_path / "rdd-sweep_rdd_linear.csv").read_text())
    assert [r.distance for r in sweep] == [0.1, 0.5]


def test_baseline_and_diagnostics_commands(tmp_path):
    assert cli.main(["baseline", "--design", "unconfounded", "--family", "linear", "--n", "200",
                     "--warmup-steps", "20", "--steps", "3", "--repetitions", "1",
                     "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "baseline_unconfounded_linear.json").read_text())
    assert d["spread"] >= 0 and d["recorded"] == 1 + 3
    assert cli.main(["diagnostics", "--design", "unconfounded", "--family", "linear",
                     "--n-grid", "10,100", "--reps", "2", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "diagnostics_unconfounded_linear.json").read_text())
    assert d["n_grid"] == [10, 100]
    assert cli.main(["diagnostics", "--design", "iv", "--family", "gp",
                     "--out", str(tmp_path)]) == 2
