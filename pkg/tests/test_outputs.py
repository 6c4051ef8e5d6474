import csv
import io
import json
import os

import pytest

from dualfeed.engine import run_scenario
from dualfeed.outputs import (
    FORMATS, METRIC_COLUMNS, RECOVERY_COLUMNS, emit_outputs, metrics_csv, recovery_csv, render,
    topology_dot,
)
from dualfeed.scenario import ScenarioConfig
from dualfeed.index import FeedId


def test_metrics_row_for_table3_leaf(scenario):
    rows = list(csv.reader(io.StringIO(metrics_csv(run_scenario(scenario("table3"))))))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert rows[9] == ["9", "5", "5", "0", "2", "0"]


def test_recovery_row_for_node3(scenario):
    rows = list(csv.DictReader(io.StringIO(recovery_csv(run_scenario(scenario("table3_fail3"))))))
    assert len(rows) == 1
    row = rows[0]
    assert tuple(row) == RECOVERY_COLUMNS
    assert (row["failure_node"], row["fail_time"], row["affected_count"]) == ("3", "100", "6")
    assert int(row["detect_time"]) <= 103 and int(row["resume_time"]) <= 105


def test_censored_failure_writes_empty_cells(scenario):
    text = recovery_csv(run_scenario(scenario("table3_fail3", failures=[(3, 199)])))
    assert text.splitlines()[1].startswith("3,199,") and ",," in text


def test_empty_run_gives_headers_and_lone_source():
    result = run_scenario(ScenarioConfig(node_count=1, horizon=20))
    files = render(result)
    assert files["metrics.csv"] == ",".join(METRIC_COLUMNS) + "\n"
    assert files["recovery.csv"] == ",".join(RECOVERY_COLUMNS) + "\n"
    assert files["topology_f1.dot"] == 'digraph f1 {\n  0 [label="0 source"];\n}\n'


def test_dot_edges_and_labels(scenario):
    dot = topology_dot(run_scenario(scenario("table3")).topology, FeedId.F2)
    assert dot.startswith("digraph f2 {")
    assert '  8 [label="8 f2"];' in dot and "  8 -> 9;" in dot and "  0 -> 2;" in dot


def test_trace_is_json_lines(scenario):
    text = render(run_scenario(scenario("table3")), ["jsonl"])["trace.jsonl"]
    recs = [json.loads(line) for line in text.splitlines()]
    assert [r["seq_no"] for r in recs] == list(range(len(recs)))
    assert all(list(r)[:3] == ["at", "seq_no", "kind"] for r in recs)


def test_unknown_format_rejected(scenario):
    with pytest.raises(ValueError, match="csv"):
        render(run_scenario(scenario("table3")), ["xml"])


def test_emit_writes_every_file(tmp_path, scenario):
    paths = emit_outputs(run_scenario(scenario("table3")), tmp_path / "out")
    names = sorted(p.name for p in paths)
    assert names == ["metrics.csv", "recovery.csv", "topology_f1.dot", "topology_f2.dot", "trace.jsonl"]
    assert not list((tmp_path / "out").glob("*.part"))
    assert set(FORMATS) == {"csv", "jsonl", "dot"}


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_directory_leaves_nothing(tmp_path, scenario):
    out = tmp_path / "ro"
    out.mkdir()
    out.chmod(0o500)
    try:
        with pytest.raises(OSError, match="cannot write outputs"):
            emit_outputs(run_scenario(scenario("table3")), out)
        assert list(out.iterdir()) == []
    finally:
        out.chmod(0o700)


def test_output_path_is_a_file(tmp_path, scenario):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write outputs"):
        emit_outputs(run_scenario(scenario("table3")), blocker)
    assert blocker.read_text() == "x"
