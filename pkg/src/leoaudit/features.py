"""
Cross-layer alignment and windowed fingerprints.

The internal-to-user ratio R is the terminal's internal downlink indicator
(``downlink_throughput_bps`` / 1e6, decimal Mbps) divided by the goodput of
an active throughput test, using the single telemetry sample nearest to the
test timestamp.
"""

from __future__ import annotations

import bisect
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError
from .ingest import PingProbe, PolicyState, TelemetrySample, ThroughputTest
from .label import LabeledSegment, covering_segment, segment_at
from .stats import SummaryTriplet, median, summarize

log = logging.getLogger(__name__)

BPS_PER_MBPS = 1e6


@dataclass(frozen=True)
class FeatureConfig:
    window_s: float = 180.0
    align_tol_s: float = 10.0
    min_tests_per_window: int = 1

    def __post_init__(self):
        if not self.window_s > 0:
            raise ConfigError(f"window_s must be > 0, got {self.window_s!r}")
        if not self.align_tol_s > 0:
            raise ConfigError(f"align_tol_s must be > 0, got {self.align_tol_s!r}")
        if self.min_tests_per_window < 1:
            raise ConfigError("min_tests_per_window must be a positive integer")


@dataclass(frozen=True)
class RatioSample:
    ts: float
    r: float
    t_user_mbps: float
    c_int_mbps: float


@dataclass(frozen=True)
class WindowFeature:
    window_start: float
    n_tests: int
    median_down_mbps: float | None = None
    median_r: float | None = None
    median_pop_rtt_ms: float | None = None

    @property
    def complete(self) -> bool:
        return self.median_down_mbps is not None and self.median_r is not None


@dataclass
class AlignStats:
    aligned: int = 0
    no_telemetry: int = 0
    zero_goodput: int = 0


def nearest_index(keys: Sequence[float], ts: float) -> int | None:
    """Index of the key closest to ``ts``; the earlier one wins exact ties."""
    if not keys:
        return None
    i = bisect.bisect_left(keys, ts)
    if i == 0:
        return 0
    if i == len(keys):
        return i - 1
    return i - 1 if ts - keys[i - 1] <= keys[i] - ts else i


def align_ratio(
    test: ThroughputTest,
    telemetry: Sequence[TelemetrySample],
    tol_s: float = 10.0,
    *,
    keys: Sequence[float] | None = None,
    stats: AlignStats | None = None,
) -> RatioSample | None:
    """Pair ``test`` with its nearest telemetry sample (distance <= ``tol_s``).

    ``keys`` may carry the precomputed telemetry timestamps when aligning many
    tests against the same timeline.
    """
    if keys is None:
        keys = [s.ts for s in telemetry]
    i = nearest_index(keys, test.ts)
    if i is None or abs(keys[i] - test.ts) > tol_s:
        if stats is not None:
            stats.no_telemetry += 1
        return None
    if test.down_mbps <= 0:
        if stats is not None:
            stats.zero_goodput += 1
        return None
    c_int = telemetry[i].downlink_throughput_bps / BPS_PER_MBPS
    if stats is not None:
        stats.aligned += 1
    return RatioSample(ts=test.ts, r=c_int / test.down_mbps, t_user_mbps=test.down_mbps, c_int_mbps=c_int)


def align_ratios(
    tests: Sequence[ThroughputTest], telemetry: Sequence[TelemetrySample], tol_s: float = 10.0
) -> tuple[list[RatioSample], AlignStats]:
    keys = [s.ts for s in telemetry]
    stats = AlignStats()
    out = []
    for t in tests:
        rs = align_ratio(t, telemetry, tol_s, keys=keys, stats=stats)
        if rs is not None:
            out.append(rs)
    return out, stats


def _rtt(sample) -> float:
    if isinstance(sample, TelemetrySample):
        return sample.pop_rtt_ms
    if isinstance(sample, PingProbe):
        return sample.avg_rtt_ms
    return sample[1]


def window_index(ts: float, trace_start: float, window_s: float) -> int:
    return math.floor((ts - trace_start) / window_s)


def window_features(
    tests: Sequence[ThroughputTest],
    ratios: Sequence[RatioSample],
    rtt_source: Sequence,
    cfg: FeatureConfig,
    trace_start: float,
    trace_end: float | None = None,
) -> list[WindowFeature]:
    """Per-window medians over non-overlapping windows ``[start + kW, start + (k+1)W)``.

    ``rtt_source`` holds telemetry samples (PoP RTT), ping probes (host RTT)
    or plain ``(ts, rtt_ms)`` pairs. Samples before ``trace_start`` or at/after
    ``trace_end`` are ignored. Windows with fewer than
    ``cfg.min_tests_per_window`` tests carry no medians.
    """
    if not cfg.window_s > 0:
        raise ConfigError("window_s must be > 0")
    W = cfg.window_s

    def bucket(items, value):
        groups: dict[int, list[float]] = defaultdict(list)
        for it in items:
            ts = it[0] if isinstance(it, tuple) else it.ts
            if ts < trace_start or (trace_end is not None and ts >= trace_end):
                continue
            groups[window_index(ts, trace_start, W)].append(value(it))
        return groups

    downs = bucket(tests, lambda t: t.down_mbps)
    rs = bucket(ratios, lambda r: r.r)
    rtts = bucket(rtt_source, _rtt)

    if trace_end is not None:
        n_windows = max(0, math.ceil((trace_end - trace_start) / W))
    else:
        occupied = [*downs, *rs, *rtts]
        n_windows = max(occupied) + 1 if occupied else 0

    out = []
    for k in range(n_windows):
        d = downs.get(k, [])
        enough = len(d) >= cfg.min_tests_per_window
        out.append(WindowFeature(
            window_start=trace_start + k * W,
            n_tests=len(d),
            median_down_mbps=median(d) if enough else None,
            median_r=median(rs[k]) if enough and rs.get(k) else None,
            median_pop_rtt_ms=median(rtts[k]) if enough and rtts.get(k) else None,
        ))
    return out


def window_labels(
    windows: Sequence[WindowFeature],
    segments: Sequence[LabeledSegment],
    window_s: float,
    trace_end: float | None = None,
) -> list[PolicyState | None]:
    """Nominal state of each window lying wholly inside one labeled segment."""
    labels = []
    for wf in windows:
        end = wf.window_start + window_s
        if trace_end is not None:
            end = min(end, trace_end)
        seg = covering_segment(segments, wf.window_start, end)
        labels.append(seg.state if seg else None)
    return labels


# ---------------------------------------------------------------------------
# per-state summaries
# ---------------------------------------------------------------------------

HIGH_SPEED_LABEL = "S2/S4"


@dataclass(frozen=True)
class StateSummary:
    label: str
    states: tuple[PolicyState, ...]
    n_tests: int
    down_mbps: SummaryTriplet | None
    host_rtt_ms: SummaryTriplet | None
    pop_rtt_ms: SummaryTriplet | None
    r: SummaryTriplet | None


@dataclass
class _Bins:
    down: list[float] = field(default_factory=list)
    host: list[float] = field(default_factory=list)
    pop: list[float] = field(default_factory=list)
    r: list[float] = field(default_factory=list)

    def empty(self) -> bool:
        return not (self.down or self.host or self.pop or self.r)


def _groups(combine_s2_s4: bool) -> list[tuple[str, tuple[PolicyState, ...]]]:
    if combine_s2_s4:
        return [("S1", (PolicyState.S1,)),
                (HIGH_SPEED_LABEL, (PolicyState.S2, PolicyState.S4)),
                ("S3", (PolicyState.S3,))]
    return [(s.value, (s,)) for s in (PolicyState.S1, PolicyState.S2, PolicyState.S4, PolicyState.S3)]


def state_samples(tests, ratios, pings, telemetry, segments, combine_s2_s4: bool = True) -> dict[str, _Bins]:
    """Assign every sample to the segment containing its timestamp, grouped by state label."""
    label_of = {s: name for name, states in _groups(combine_s2_s4) for s in states}
    bins: dict[str, _Bins] = {name: _Bins() for name, _ in _groups(combine_s2_s4)}

    def put(items, attr, value):
        for it in items:
            seg = segment_at(segments, it.ts)
            if seg is not None:
                getattr(bins[label_of[seg.state]], attr).append(value(it))

    put(tests, "down", lambda t: t.down_mbps)
    put(ratios, "r", lambda r: r.r)
    put(pings, "host", lambda p: p.avg_rtt_ms)
    put(telemetry, "pop", lambda s: s.pop_rtt_ms)
    return bins


def per_state_summary(
    tests: Sequence[ThroughputTest],
    ratios: Sequence[RatioSample],
    pings: Sequence[PingProbe],
    telemetry: Sequence[TelemetrySample],
    segments: Sequence[LabeledSegment],
    combine_s2_s4: bool = True,
) -> list[StateSummary]:
    bins = state_samples(tests, ratios, pings, telemetry, segments, combine_s2_s4)
    out = []
    for name, states in _groups(combine_s2_s4):
        b = bins[name]
        if b.empty():
            log.warning("no samples inside labeled segments for state %s; omitted from summary", name)
            continue
        out.append(StateSummary(
            label=name,
            states=states,
            n_tests=len(b.down),
            down_mbps=summarize(b.down) if b.down else None,
            host_rtt_ms=summarize(b.host) if b.host else None,
            pop_rtt_ms=summarize(b.pop) if b.pop else None,
            r=summarize(b.r) if b.r else None,
        ))
    return out
