from __future__ import annotations

import json

import pytest
import yaml

from cwpotts import cli
from cwpotts.cli import main, parse_grid, validate
from cwpotts.errors import ConfigError, NumericError


def run(capsys, *argv: str) -> tuple[int, dict]:
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


def test_parse_grid():
    assert parse_grid("50:200:25") == [50, 75, 100, 125, 150, 175, 200]
    assert parse_grid("6,7") == [6, 7]
    assert parse_grid(8) == [8]
    with pytest.raises(ConfigError):
        parse_grid("5:1")


def test_validate_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        validate({"command": "landscape", "temperature": 1.0})


def test_validate_rejects_wrong_types():
    with pytest.raises(ConfigError):
        validate({"command": "landscape", "q": 2.5})
    with pytest.raises(ConfigError):
        validate({"command": "landscape", "dist": "ber:7"})


def test_landscape(capsys):
    code, out = run(capsys, "landscape", "--q", "3", "--beta", "2.9")
    assert code == 0
    assert out["landscape"]["regime"] == "(b2,b3)"
    assert out["config"]["beta"] == 2.9


def test_lumped_cap(capsys):
    code, out = run(capsys, "lumped-cap", "--N", "6:8:2")
    assert code == 0
    rec = out["records"][0]
    assert set(rec) >= {"A", "B", "capacity_log", "harmonic_sum_log", "hitting_time_log",
                        "residual"}
    assert [r["N"] for r in out["records"]] == [6, 8]


def test_micro_matches_lumped(capsys):
    _, micro = run(capsys, "micro-exact", "--N", "6")
    _, lumped = run(capsys, "lumped-cap", "--N", "6")
    m, l = micro["records"][0], lumped["records"][0]
    assert m["capacity_log"] - m["log_partition"] == pytest.approx(
        l["capacity_log"] - l["log_partition"], abs=1e-9)


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"q": 4, "beta": 3.0}))
    _, out = run(capsys, "landscape", "--config", str(cfg), "--beta", "3.4")
    assert out["config"]["q"] == 4 and out["config"]["beta"] == 3.4


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("q: 3\nbogus: 1\n")
    code, out = run(capsys, "landscape", "--config", str(cfg))
    assert code == 2 and out["error"] == "ConfigError"


def test_bad_flag_exit_2(capsys):
    code, out = run(capsys, "landscape", "--q", "three")
    assert code == 2 and out["exit_code"] == 2


def test_size_guard_exit_4(capsys):
    code, out = run(capsys, "micro-exact", "--N", "20")
    assert code == 4 and out["error"] == "SizeGuardError"


def test_negative_beta_exit_2(capsys):
    code, out = run(capsys, "landscape", "--beta", "-1")
    assert code == 2 and "beta" in out["message"]


def test_numeric_error_exit_3(monkeypatch, capsys):
    def boom(cfg):
        raise NumericError("solver diverged", residual=1.0)

    monkeypatch.setitem(cli.HANDLERS, "landscape", boom)
    code, out = run(capsys, "landscape")
    assert code == 3 and out["details"] == {"residual": 1.0}


def _strip_timestamp(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not line.startswith("# generated"))


def test_csv_reproducible(tmp_path, capsys):
    args = ["micro-sim", "--N", "5", "--samples", "30", "--seed", "3"]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b")])
    capsys.readouterr()
    a = (tmp_path / "a" / "table.csv").read_text()
    b = (tmp_path / "b" / "table.csv").read_text()
    assert _strip_timestamp(a).replace("/a", "/b") == _strip_timestamp(b)
    assert "# config:" in a
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config"]["seed"] == 3


def test_disorder_check(capsys):
    code, out = run(capsys, "disorder-check", "--N", "6", "--dist", "ber:0.5", "--samples", "2000")
    assert code == 0
    assert abs(out["records"][0]["z"]) < 5


def test_ratio_and_scaling(capsys):
    code, out = run(capsys, "ratio-experiment", "--N", "20:30:10", "--beta", "3.2")
    assert code == 0 and len(out["records"]) == 2
    code, out = run(capsys, "scaling", "--N", "20:40:10")
    assert code == 0 and "intercept" in out and out["transition"] == "from_m0"


def test_concentration_small(capsys):
    code, out = run(capsys, "concentration", "--N", "5", "--dist", "gauss:0.04",
                    "--samples", "4")
    assert code == 0
    assert set(out["summary"]["tails"]) == {"log_z_capacity", "log_harmonic_sum",
                                            "log_hitting_time"}
