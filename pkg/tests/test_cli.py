import json
from pathlib import Path

import pytest

from spchain import cli
from spchain.metrics import MetricsReport

ROOT = Path(__file__).resolve().parent.parent
SMOKE = ROOT / "scenarios" / "smoke.json"


def test_run_smoke_matches_golden_report(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert cli.main(["run", "--config", str(SMOKE), "--out", str(out)]) == 0
    golden = (ROOT / "tests" / "vectors" / "smoke_report.json").read_text()
    assert out.read_text() == golden
    assert "safety violations 0" in capsys.readouterr().out


def test_run_overrides_and_csv(tmp_path):
    out = tmp_path / "r.csv"
    code = cli.main(["run", "--config", str(SMOKE), "--seed", "3", "--slots", "6",
                     "--consensus", "serial2phase", "--leader", "static-viewchange", "--proofs", "per-tx",
                     "--out", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) == 3


def test_trace_is_ndjson(tmp_path):
    trace = tmp_path / "events.ndjson"
    assert cli.main(["run", "--config", str(SMOKE), "--slots", "3", "--trace", str(trace)]) == 0
    lines = trace.read_text().splitlines()
    assert lines and all(isinstance(json.loads(line), dict) for line in lines[:50])


@pytest.mark.parametrize("content", ['{"m": 0}', '{"bogus": 1}', "not json", '{"workload": {"rate": -1}}'])
def test_bad_config_exits_3(tmp_path, content, capsys):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert cli.main(["run", "--config", str(path)]) == 3
    assert "config error" in capsys.readouterr().err


def test_missing_file_and_usage_errors_exit_3(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == 3
    with pytest.raises(SystemExit) as exc:
        cli.main(["run"])
    assert exc.value.code == 3
    with pytest.raises(SystemExit) as exc:
        cli.main(["compare", "--axis", "colour"])
    assert exc.value.code == 3


def test_safety_violation_exits_2(monkeypatch):
    monkeypatch.setattr(cli, "run_scenario", lambda cfg, trace=None: MetricsReport(safety_violations=1))
    assert cli.main(["run", "--config", str(SMOKE)]) == 2


def test_plan_prints_minimum_sizes(capsys):
    assert cli.main(["plan", "--shards", "4", "16", "--threshold", "2^-20"]) == 0
    out = capsys.readouterr().out
    assert "m=4: smallest k with failure probability below 2^-20 is" in out
    assert "m=16:" in out


def test_plan_csv_and_bad_threshold(capsys):
    assert cli.main(["plan", "--shards", "2", "--csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("m,k,f") and len(lines) == 2
    assert cli.main(["plan", "--threshold", "lots"]) == 3


def test_compare_small_config(tmp_path, capsys):
    out = tmp_path / "cmp.json"
    assert cli.main(["compare", "--axis", "proofs", "--config", str(SMOKE), "--slots", "6", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["modes"] == ["batched", "per-tx"]
    m = data["metrics"]
    assert m["batched"]["proof_bytes_per_tx"] < m["per-tx"]["proof_bytes_per_tx"]
    assert "throughput batched vs per-tx" in capsys.readouterr().out
