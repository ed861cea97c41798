import csv
import io
import subprocess
import sys

import pytest

from lirkamf.cli import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    load_config_file,
    main,
    run_experiment,
    run_sweep,
    write_csv,
)

SMALL = dict(problem="allen-cahn", M=7, method="lirk3", steps=(10, 20, 40))


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_config_validation():
    ExperimentConfig().validate()
    bad = {
        "problem": ExperimentConfig(problem="heat"),
        "strategy": ExperimentConfig(strategy="newton"),
        "steps": ExperimentConfig(steps=(20, 10)),
        "grid-size": ExperimentConfig(M=1),
        "splitting": ExperimentConfig(splitting="three-way"),
    }
    for key, cfg in bad.items():
        with pytest.raises(ConfigError) as info:
            cfg.validate()
        assert info.value.key == key
    with pytest.raises(ConfigError):
        ExperimentConfig(steps=()).validate()


def test_run_experiment_rows():
    rows = run_experiment(ExperimentConfig(**SMALL))
    assert [r["steps"] for r in rows] == [10, 20, 40]
    assert rows[0]["estimated_order"] is None
    assert rows[-1]["estimated_order"] == pytest.approx(3.0, abs=0.5)
    assert all(r["cpu_seconds"] >= 0 and not r["diverged"] for r in rows)


def test_brusselator_uses_cached_reference():
    # h = 0.2 is beyond the explicit stability limit of the reaction term
    cfg = ExperimentConfig(problem="brusselator", M=5, method="lirk3", strategy="amfr1", steps=(5, 10, 20, 40))
    rows = run_experiment(cfg)
    assert rows[0]["case"] == 1
    assert rows[0]["diverged"] and rows[0]["error"] is None
    assert all(r["error"] > 0 and not r["diverged"] for r in rows[1:])
    assert rows[-1]["estimated_order"] == pytest.approx(3.0, abs=0.5)


def test_sweep_isolates_failures_and_keeps_order():
    good = ExperimentConfig(**SMALL)
    bad = ExperimentConfig(**{**SMALL, "steps": ()})
    rows = run_sweep([good, bad, good])
    assert len(rows) == 7
    assert rows[3]["error_message"].startswith("ConfigError")
    assert rows[3]["steps"] is None
    first, last = rows[:3], rows[4:]
    strip = lambda rs: [{k: v for k, v in r.items() if k != "cpu_seconds"} for r in rs]
    assert strip(first) == strip(last)


def test_parallel_sweep_matches_serial():
    cfgs = [ExperimentConfig(**SMALL), ExperimentConfig(**{**SMALL, "strategy": "amf"})]
    serial = run_sweep(cfgs)
    parallel = run_sweep(cfgs, parallel=True, max_workers=2)
    for a, b in zip(serial, parallel):
        assert {k: v for k, v in a.items() if k != "cpu_seconds"} == {k: v for k, v in b.items() if k != "cpu_seconds"}


def test_empty_sweep():
    with pytest.raises(ValueError):
        run_sweep([])


def test_csv_schema():
    rows = run_experiment(ExperimentConfig(**SMALL))
    buf = io.StringIO()
    write_csv(rows, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    parsed = read_csv(text)
    assert float(parsed[0]["error"]) == rows[0]["error"]
    assert parsed[0]["diverged"] == "false"
    assert parsed[0]["case"] == ""


def test_config_file(tmp_path):
    path = tmp_path / "study.ini"
    path.write_text(
        "[a]\nproblem = allen-cahn\ngrid-size = 7\nmethod = lirk4\nsteps = 10, 20, 40\n"
        "[b]\nproblem = brusselator\ncase = 2\ngrid-size = 5\nstrategy = amf\nsplitting = three-way\nsteps = 5,10\n",
        encoding="utf-8",
    )
    a, b = load_config_file(path)
    assert a.method == "lirk4" and a.M == 7 and a.steps == (10, 20, 40)
    assert b.case == 2 and b.splitting == "three-way" and b.strategy == "amf"
    bad = tmp_path / "bad.ini"
    bad.write_text("[x]\ncolour = red\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(bad)


def test_main_run_writes_csv(tmp_path, capsys):
    out = tmp_path / "out.csv"
    code = main(["run", "--grid-size", "7", "--steps", "10,20,40", "--strategy", "amfr1", "--output", str(out)])
    assert code == 0
    rows = read_csv(out.read_text())
    assert [r["strategy"] for r in rows] == ["amfr1"] * 3
    assert "order" in capsys.readouterr().out


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[a]\ngrid-size = 5\nmethod = lirk4\nsteps = 4,8,16\n", encoding="utf-8")
    out = tmp_path / "out.csv"
    assert main(["run", "--config", str(cfg), "--method", "lirk3", "--output", str(out)]) == 0
    rows = read_csv(out.read_text())
    assert {r["method"] for r in rows} == {"lirk3"} and rows[0]["M"] == "5"


def test_sweep_exit_code(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text(
        "[ok]\ngrid-size = 5\nsteps = 4,8\n[broken]\ngrid-size = 5\nsteps = 8,4\n",
        encoding="utf-8",
    )
    out = tmp_path / "out.csv"
    assert main(["sweep", str(cfg), "--output", str(out)]) == 1
    rows = read_csv(out.read_text())
    assert rows[-1]["error_message"].startswith("ConfigError: steps")


def test_usage_error_names_key(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "--steps", "10,5"])
    assert info.value.code == 2
    assert "steps" in capsys.readouterr().err


def test_divergence_does_not_fail_process(tmp_path):
    out = tmp_path / "out.csv"
    code = main(["run", "--problem", "brusselator", "--grid-size", "5", "--steps", "5,10,20", "--output", str(out)])
    assert code == 0
    rows = read_csv(out.read_text())
    assert [r["diverged"] for r in rows] == ["true", "false", "false"]
    assert rows[0]["error"] == ""


def test_module_entry_point():
    result = subprocess.run(
        [sys.executable, "-m", "lirkamf", "run", "--grid-size", "5", "--steps", "4,8,16"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert result.stdout.splitlines()[0] == ",".join(CSV_COLUMNS)
