"""
Report bundle: per-state summary table, CDF and scatter plot data, detections,
grace window and confusion matrix, plus a manifest of what was written.

Plot data is delimited text only. Numbers use a fixed format so two runs over
the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

from .audit import Calibration, GraceReport, PolicyClass
from .features import HIGH_SPEED_LABEL, WindowFeature, state_samples
from .label import dumps_segments
from .pipeline import CLASS_ORDER, AuditInputs, AuditResult
from .stats import empirical_cdf


def num(x: float | None) -> str:
    return "" if x is None else format(x, ".10g")


def stamp(ts: float) -> str:
    return f"{ts:.3f}"


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> tuple[str, int]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = 0
    for row in rows:
        w.writerow(row)
        n += 1
    return buf.getvalue(), n


def features_csv(windows: Sequence[WindowFeature]) -> tuple[str, int]:
    return _csv(
        ["window_start", "n_tests", "median_down_mbps", "median_r", "median_pop_rtt_ms"],
        ([stamp(w.window_start), w.n_tests, num(w.median_down_mbps), num(w.median_r), num(w.median_pop_rtt_ms)]
         for w in windows))


def detections_csv(windows: Sequence[WindowFeature], classes: Sequence[PolicyClass]) -> tuple[str, int]:
    return _csv(
        ["window_start", "class", "median_down_mbps", "median_r"],
        ([stamp(w.window_start), c.value, num(w.median_down_mbps), num(w.median_r)]
         for w, c in zip(windows, classes)))


def summary_csv(result: AuditResult) -> tuple[str, int]:
    header = ["state", "n_tests"]
    for q in ("down_mbps", "host_rtt_ms", "pop_rtt_ms", "r"):
        header += [f"{q}_median", f"{q}_p10", f"{q}_p90"]
    rows = []
    for s in result.summaries:
        row = [s.label, s.n_tests]
        for trip in (s.down_mbps, s.host_rtt_ms, s.pop_rtt_ms, s.r):
            row += ["", "", ""] if trip is None else [num(v) for v in trip.as_tuple()]
        rows.append(row)
    return _csv(header, rows)


def cdf_csvs(inp: AuditInputs, result: AuditResult) -> dict[str, tuple[str, int]]:
    bins = state_samples(inp.tests, result.ratios, inp.pings, inp.telemetry, result.segments)
    order = ["S1", HIGH_SPEED_LABEL, "S3"]
    down_rows = [[name, num(v), num(p)] for name in order for v, p in empirical_cdf(bins[name].down)]
    rtt_rows = [[name, metric, num(v), num(p)]
                for name in order
                for metric, vals in (("host_rtt_ms", bins[name].host), ("pop_rtt_ms", bins[name].pop))
                for v, p in empirical_cdf(vals)]
    return {
        "cdf_down.csv": _csv(["state", "down_mbps", "cdf"], down_rows),
        "cdf_rtt.csv": _csv(["state", "metric", "rtt_ms", "cdf"], rtt_rows),
    }


def scatter_csv(result: AuditResult) -> tuple[str, int]:
    return _csv(
        ["window_start", "median_down_mbps", "median_r", "true_label", "predicted_class"],
        ([stamp(w.window_start), num(w.median_down_mbps), num(w.median_r),
          "" if lab is None else lab.value, c.value]
         for w, c, lab in zip(result.windows, result.classes, result.labels) if w.complete))


def confusion_csv(result: AuditResult) -> tuple[str, int]:
    matrix = result.confusion()
    return _csv(["true_class", *[c.value for c in CLASS_ORDER]],
                ([row.value, *[matrix[row][c] for c in CLASS_ORDER]] for row in matrix))


def grace_json(grace: GraceReport | None) -> str:
    payload = grace.to_dict() if grace else {"t_quota_zero": None, "t_throttle_onset": None, "g_duration_s": None}
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def calibration_json(cal: Calibration) -> str:
    return json.dumps(cal.to_dict(), indent=1, sort_keys=True) + "\n"


def build_bundle(inp: AuditInputs, result: AuditResult) -> dict[str, tuple[str, int]]:
    """File name -> (content, data row count)."""
    files = {
        "features.csv": features_csv(result.windows),
        "detections.csv": detections_csv(result.windows, result.classes),
        "scatter.csv": scatter_csv(result),
        "grace.json": (grace_json(result.grace), int(result.grace is not None)),
    }
    if result.labeled:
        seg_text = dumps_segments(result.segments)
        files["segments.jsonl"] = (seg_text, len(result.segments))
        files["summary.csv"] = summary_csv(result)
        files["confusion.csv"] = confusion_csv(result)
        files.update(cdf_csvs(inp, result))
    return files


def write_bundle(
    out_dir: str | Path, inp: AuditInputs, result: AuditResult, extra_files: dict[str, int] | None = None
) -> Path:
    """Write every bundle file and ``manifest.json``; ``extra_files`` lists
    already-written companions (name -> rows) to record in the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = build_bundle(inp, result)
    for name, (text, _) in files.items():
        (out / name).write_text(text, encoding="utf-8")
    listed = {name: rows for name, (_, rows) in files.items()}
    listed.update(extra_files or {})
    manifest = {
        "files": [{"name": name, "rows": rows} for name, rows in sorted(listed.items())],
        "trace_start": stamp(result.trace_start),
        "trace_end": stamp(result.trace_end),
        "windows": len(result.windows),
        "labeled_windows": sum(lab is not None for lab in result.labels),
        "ratio_alignment": vars(result.align_stats),
        "rejects": {k: len(v) for k, v in sorted(inp.rejects.items())},
        "warnings": result.warnings,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
