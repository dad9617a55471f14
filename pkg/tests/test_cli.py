from slipcontrol.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main

SMALL = "[domain]\nnx = 32\nny = 16\n[sweep]\neps = 0.1\n"


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_check_config_defaults(capsys):
    assert main(["check-config"]) == EXIT_OK
    assert "[sweep]" in capsys.readouterr().out


def test_check_config_bad_key(tmp_path, capsys):
    assert main(["check-config", "--config", write(tmp_path, "[domain]\n\nfoo = 1\n")]) == EXIT_CONFIG
    assert "run.ini:3:" in capsys.readouterr().err


def test_bad_eps_override(capsys):
    assert main(["check-config", "--eps-list", "0.1,abc"]) == EXIT_CONFIG
    assert "command line:0:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_run_writes_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, SMALL), "--out", str(out), "--seed", "1"]) == EXIT_OK
    assert (out / "report.csv").exists()
    assert "result: PASS" in capsys.readouterr().out


def test_infeasible_run_exits_one(tmp_path):
    cfg = write(tmp_path, SMALL + "[envelope]\nmass = 1\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_FAIL


def test_output_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", write(tmp_path, SMALL), "--out", str(blocker)]) == EXIT_FAIL
    assert "I/O error" in capsys.readouterr().err
