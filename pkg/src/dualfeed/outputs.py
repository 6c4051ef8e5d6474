"""Write a finished run to disk as CSV, JSON lines and DOT.

Every file is a pure function of the run: rows are sorted, floats never
appear, and JSON keys keep their insertion order, so two identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

from .engine import ScenarioResult, Topology
from .index import FEEDS, FeedId

FORMATS = ("csv", "jsonl", "dot")
METRIC_COLUMNS = ("node_id", "hop_f1", "hop_f2", "hop_diff", "max_occupancy", "underruns")
RECOVERY_COLUMNS = ("failure_node", "fail_time", "detect_time", "resume_time", "recovery_time", "affected_count")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def metrics_csv(result: ScenarioResult) -> str:
    rows = []
    for nid in sorted(result.metrics.nodes):
        m = result.metrics.nodes[nid]
        rows.append((nid, m.hop_f1, m.hop_f2, m.hop_diff, m.max_occupancy, m.underruns))
    return _csv(METRIC_COLUMNS, rows)


def recovery_csv(result: ScenarioResult) -> str:
    rows = [tuple(r[c] for c in RECOVERY_COLUMNS) for r in result.metrics.failures]
    return _csv(RECOVERY_COLUMNS, rows)


def trace_jsonl(result: ScenarioResult) -> str:
    return "".join(json.dumps(rec, separators=(",", ":")) + "\n" for rec in result.trace)


def topology_dot(topo: Topology, feed: FeedId) -> str:
    """One feed tree as a DOT digraph; labels carry id and forwarded feed."""
    lines = [f"digraph {feed} {{"]
    lines.append(f'  {topo.source} [label="{topo.source} source"];')
    for nid in topo.nodes():
        fwd = topo.forwarded.get(nid)
        lines.append(f'  {nid} [label="{nid} {fwd if fwd is not None else "-"}"];')
    for nid in sorted(topo.children[feed]):
        for c in sorted(topo.children[feed][nid]):
            lines.append(f"  {nid} -> {c};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def render(result: ScenarioResult, formats=FORMATS) -> dict[str, str]:
    """File name -> contents for the requested formats."""
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}; valid: {list(FORMATS)}")
    files = {}
    if "csv" in formats:
        files["metrics.csv"] = metrics_csv(result)
        files["recovery.csv"] = recovery_csv(result)
    if "jsonl" in formats:
        files["trace.jsonl"] = trace_jsonl(result)
    if "dot" in formats:
        for feed in FEEDS:
            files[f"topology_{feed}.dot"] = topology_dot(result.topology, feed)
    return files


def emit_outputs(result: ScenarioResult, out_dir, formats=FORMATS) -> list[Path]:
    """Write the requested files into ``out_dir``; nothing is left behind on failure."""
    files = render(result, formats)
    out = Path(out_dir)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out / name
            tmp = path.with_name(path.name + ".part")
            written.append(tmp)
            tmp.write_text(text, encoding="utf-8")
        final = []
        for tmp in written:
            dest = tmp.with_name(tmp.name[: -len(".part")])
            os.replace(tmp, dest)
            final.append(dest)
        return final
    except OSError as err:
        for p in written:
            for q in (p, p.with_name(p.name[: -len(".part")])):
                try:
                    q.unlink()
                except OSError:
                    pass
        raise OSError(f"cannot write outputs to {out}: {err.strerror or err}") from err
