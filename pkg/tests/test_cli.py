import json
import os
from pathlib import Path

import pytest

from xpomcp.cli import main

FIXTURE = Path(__file__).parent / "fixtures" / "tiger_W40_1000.jsonl"


@pytest.fixture(scope="module")
def small_trace(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--runs", "12", "--W", "40", "--seed", "4",
                 "--particles", "2048", "--simulations", "2048", "--out", str(out)]) == 0
    return out / "trace.jsonl"


def test_simulate_is_reproducible(small_trace, tmp_path):
    assert main(["simulate", "--runs", "12", "--W", "40", "--seed", "4", "--particles", "2048",
                 "--simulations", "2048", "--jobs", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trace.jsonl").read_bytes() == small_trace.read_bytes()


def test_synthesize_outputs(small_trace, tmp_path, capsys):
    assert main(["synthesize", "--trace", str(small_trace), "--template", "tiger",
                 "--out", str(tmp_path), "--emit-smt", "problem.smt2"]) == 0
    for name in ("rule.json", "rule.txt", "violations.jsonl", "problem.smt2"):
        assert (tmp_path / name).exists()
    text = (tmp_path / "rule.txt").read_text()
    assert text.startswith("fail to satisfy ") and "rule: listen if:" in text
    rule = json.loads((tmp_path / "rule.json").read_text())
    n_viol = len((tmp_path / "violations.jsonl").read_text().splitlines())
    assert rule["unsatisfied_steps"] == n_viol


def test_detect_tau_extremes(small_trace, tmp_path):
    assert main(["synthesize", "--trace", str(small_trace), "--template", "tiger", "--out", str(tmp_path)]) == 0
    rule = str(tmp_path / "rule.json")
    counts = {}
    for tau in ("0.0", "1.0"):
        out = tmp_path / f"d{tau}"
        assert main(["detect", "--trace", str(small_trace), "--rule", rule, "--tau", tau,
                     "--w", "500", "--out", str(out)]) == 0
        doc = json.loads((out / "anomalies.json").read_text())
        counts[tau] = sum(v["unexpected"] for v in doc["violations"]), len(doc["violations"])
        assert (out / "anomalies.txt").read_text().startswith("fail to satisfy")
    assert counts["0.0"][0] == counts["0.0"][1] > 0
    assert counts["1.0"][0] == 0


def test_detect_iforest(small_trace, tmp_path):
    assert main(["detect", "--trace", str(small_trace), "--method", "iforest",
                 "--contamination", "0.1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "anomalies.json").read_text())
    assert doc["method"] == "iforest" and len(doc["anomalies"]) >= 1


def test_missing_template_exits_2(small_trace, tmp_path, capsys):
    assert main(["synthesize", "--trace", str(small_trace), "--template", "nope.rule", "--out", str(tmp_path)]) == 2
    assert "nope.rule" in capsys.readouterr().err


def test_bad_template_names_location(small_trace, tmp_path, capsys):
    bad = tmp_path / "bad.rule"
    bad.write_text("rule a {\n action: 0 when: p_left >= 1.5 }\n")
    assert main(["synthesize", "--trace", str(small_trace), "--template", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.rule:2:" in capsys.readouterr().err


def test_bad_trace_exits_2(tmp_path, capsys):
    lines = FIXTURE.read_text().splitlines()[:3]
    lines[2] = lines[2][:-5]
    bad = tmp_path / "t.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["synthesize", "--trace", str(bad), "--template", "tiger", "--out", str(tmp_path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_backend_failure_exits_3(small_trace, tmp_path):
    assert main(["synthesize", "--trace", str(small_trace), "--template", "tiger", "--out", str(tmp_path),
                 "--smt-solver", "/bin/false"]) == 3


def test_rule_trace_mismatch_exits_2(small_trace, tmp_path):
    rule = tmp_path / "rule.json"
    rule.write_text(json.dumps({"template": "rule r { action: 2 when: p0 >= x }\n", "assignment": {"x": 0.5}}))
    assert main(["detect", "--trace", str(small_trace), "--rule", str(rule), "--out", str(tmp_path)]) == 2


def test_unknown_study_lists_known(tmp_path, capsys):
    assert main(["evaluate", "--study", "nope", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "tiger-w-sweep" in err and "velreg-w90" in err


def test_exact_policy(tmp_path, capsys):
    assert main(["exact-policy", "--model", "tiger", "--horizon", "10", "--gamma", "0.95",
                 "--out", str(tmp_path), "--label", str(FIXTURE)]) == 0
    assert (tmp_path / "policy.json").exists()
    assert "0.9565598422" in capsys.readouterr().out
    assert main(["exact-policy", "--model", "velreg", "--out", str(tmp_path)]) == 2


def test_writes_stay_inside_out(small_trace, tmp_path):
    before = set(os.listdir(Path.cwd()))
    out = tmp_path / "o"
    main(["synthesize", "--trace", str(small_trace), "--template", "tiger", "--out", str(out), "--emit-smt", "x.smt2"])
    main(["detect", "--trace", str(small_trace), "--rule", str(out / "rule.json"), "--w", "200", "--out", str(out)])
    assert set(os.listdir(Path.cwd())) == before
    assert (out / "x.smt2").exists()
