"""End-to-end audit over parsed logs: label, align, window, classify, summarize."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .audit import (
    DetectorConfig,
    GraceConfig,
    GraceReport,
    PolicyClass,
    classify_trace,
    grace_window,
)
from .errors import InsufficientDataError, stage
from .features import (
    AlignStats,
    FeatureConfig,
    RatioSample,
    StateSummary,
    WindowFeature,
    align_ratios,
    per_state_summary,
    window_features,
    window_labels,
)
from .ingest import (
    IfaceCounterSample,
    PingProbe,
    PolicyState,
    PortalEvent,
    Reject,
    TelemetrySample,
    ThroughputTest,
    format_of,
    normalize_timeline,
    parse_portal,
    parse_probes,
    parse_telemetry,
)
from .label import LabelConfig, LabeledSegment, extract_segments

log = logging.getLogger(__name__)


@dataclass
class AuditInputs:
    telemetry: list[TelemetrySample] = field(default_factory=list)
    pings: list[PingProbe] = field(default_factory=list)
    tests: list[ThroughputTest] = field(default_factory=list)
    iface: list[IfaceCounterSample] = field(default_factory=list)
    # sorted but not deduplicated: conflicting same-time states must surface
    portal: list[PortalEvent] = field(default_factory=list)
    rejects: dict[str, list[Reject]] = field(default_factory=dict)

    def trace_bounds(self) -> tuple[float, float]:
        streams = (self.telemetry, self.pings, self.tests, self.iface)
        stamps = [s.ts for stream in streams if stream for s in (stream[0], stream[-1])]
        if not stamps:
            stamps = [e.ts for e in self.portal]
        if not stamps:
            raise InsufficientDataError("no records in any input stream")
        return min(stamps), max(stamps)


def load_inputs(
    telemetry: str | Path | None = None,
    probes: str | Path | None = None,
    portal: str | Path | None = None,
) -> AuditInputs:
    inp = AuditInputs()
    if telemetry is not None:
        with stage("ingest:telemetry"):
            res = parse_telemetry(Path(telemetry), format_of(telemetry))
        inp.telemetry = normalize_timeline(res.records)
        inp.rejects["telemetry"] = res.rejects
    if probes is not None:
        with stage("ingest:probes"):
            res = parse_probes(Path(probes), format_of(probes))
        inp.pings = normalize_timeline(res.pings)
        inp.tests = normalize_timeline(res.tests)
        inp.iface = normalize_timeline(res.iface)
        inp.rejects["probes"] = res.rejects
    if portal is not None:
        with stage("ingest:portal"):
            res = parse_portal(Path(portal), format_of(portal))
        inp.portal = sorted(res.records, key=lambda e: e.ts)
        inp.rejects["portal"] = res.rejects
    return inp


@dataclass
class AuditConfig:
    label: LabelConfig = field(default_factory=LabelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    grace: GraceConfig = field(default_factory=GraceConfig)


CLASS_ORDER = [PolicyClass.HIGH_SPEED, PolicyClass.LOW_RATE_S1, PolicyClass.LOW_RATE_S3, PolicyClass.UNKNOWN]


@dataclass
class AuditResult:
    trace_start: float
    trace_end: float
    segments: list[LabeledSegment]
    ratios: list[RatioSample]
    align_stats: AlignStats
    windows: list[WindowFeature]
    classes: list[PolicyClass]
    labels: list[PolicyState | None]
    summaries: list[StateSummary]
    grace: GraceReport | None
    warnings: list[str]

    @property
    def labeled(self) -> bool:
        return bool(self.segments)

    def confusion(self) -> dict[PolicyClass, Counter]:
        """Rows: true class of labeled windows; columns: predicted class."""
        rows = {c: Counter() for c in CLASS_ORDER[:3]}
        for cls, lab in zip(self.classes, self.labels):
            if lab is not None:
                rows[PolicyClass.for_state(lab)][cls] += 1
        return rows

    def labeled_windows(self) -> list[tuple[WindowFeature, PolicyState]]:
        return [(w, lab) for w, lab in zip(self.windows, self.labels) if lab is not None]


def run_audit(inp: AuditInputs, cfg: AuditConfig | None = None) -> AuditResult:
    cfg = cfg or AuditConfig()
    warnings: list[str] = []
    with stage("label"):
        start, end = inp.trace_bounds()
        segments = extract_segments(inp.portal, start, end, cfg.label) if inp.portal else []
    if not inp.portal:
        warnings.append("empty portal log: no labels, summary or confusion matrix")
    elif not segments:
        warnings.append("portal log yields no stable segment of the minimum length")

    ratios, astats = align_ratios(inp.tests, inp.telemetry, cfg.features.align_tol_s)
    if astats.zero_goodput:
        warnings.append(f"{astats.zero_goodput} throughput tests with zero goodput skipped for R")
    windows = window_features(inp.tests, ratios, inp.telemetry, cfg.features, start)
    classes = [c for _, c in classify_trace(windows, cfg.detector)]
    labels = window_labels(windows, segments, cfg.features.window_s, end)
    n_unknown = sum(c is PolicyClass.UNKNOWN for c in classes)
    if n_unknown:
        warnings.append(f"{n_unknown} windows classified Unknown (missing goodput or ratio median)")

    summaries = []
    if segments:
        summaries = per_state_summary(inp.tests, ratios, inp.pings, inp.telemetry, segments)
        present = {s.label for s in summaries}
        for name in ("S1", "S2/S4", "S3"):
            if name not in present:
                warnings.append(f"no labeled samples for state {name}; omitted from summary")
    grace = grace_window(inp.portal, inp.tests, cfg.grace) if inp.portal else None
    for w in warnings:
        log.warning(w)
    return AuditResult(start, end, segments, ratios, astats, windows, classes, labels, summaries, grace, warnings)

