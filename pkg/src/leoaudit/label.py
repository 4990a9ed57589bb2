"""Ground-truth labeling: portal event timeline -> guard-trimmed stable segments."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import AmbiguousPortalStateError, ConfigError, PreconditionError
from .ingest import PolicyState, PortalEvent


@dataclass(frozen=True)
class LabelConfig:
    guard_s: float = 120.0
    t_min_s: float = 600.0

    def __post_init__(self):
        if not self.guard_s >= 0:
            raise ConfigError(f"guard_s must be >= 0, got {self.guard_s!r}")
        if not self.t_min_s > 0:
            raise ConfigError(f"t_min_s must be > 0, got {self.t_min_s!r}")


@dataclass(frozen=True)
class LabeledSegment:
    """Half-open interval ``[start, end)`` with one nominal portal state."""

    start: float
    end: float
    state: PolicyState

    @property
    def length(self) -> float:
        return self.end - self.start

    def contains(self, ts: float) -> bool:
        return self.start <= ts < self.end

    def covers(self, a: float, b: float) -> bool:
        return self.start <= a and b <= self.end


def _state_changes(events: Sequence[PortalEvent]) -> list[PortalEvent]:
    """Drop repeated reports of the same state; validate ordering."""
    changes: list[PortalEvent] = []
    for prev, ev in zip([None, *events], events):
        if prev is not None:
            if ev.ts < prev.ts:
                raise PreconditionError(
                    f"portal events not sorted: ts {ev.ts} follows {prev.ts}")
            if ev.ts == prev.ts and ev.state != prev.state:
                raise AmbiguousPortalStateError(
                    f"conflicting portal states {prev.state.value} and {ev.state.value} at ts {ev.ts}")
        if not changes or changes[-1].state != ev.state:
            changes.append(ev)
    return changes


def extract_segments(
    events: Sequence[PortalEvent],
    trace_start: float,
    trace_end: float,
    cfg: LabelConfig = LabelConfig(),
) -> list[LabeledSegment]:
    """Stable segments of unchanged portal state, trimmed by ``cfg.guard_s``.

    Guards are applied only around genuine state changes strictly inside
    ``(trace_start, trace_end)``; the trace endpoints are never trimmed.
    The latest event at or before ``trace_start`` sets the initial state;
    without one the prefix up to the first event stays unlabeled and the
    first event counts as a change.
    """
    if trace_start > trace_end:
        raise PreconditionError(f"trace_start {trace_start} after trace_end {trace_end}")
    changes = _state_changes(events)

    # (start, start_is_change, state) for every constant-state interval
    pieces: list[tuple[float, bool, PolicyState]] = []
    for ev in changes:
        if ev.ts <= trace_start:
            pieces = [(trace_start, False, ev.state)]
        elif ev.ts < trace_end:
            pieces.append((ev.ts, True, ev.state))

    segments = []
    for i, (a, a_change, state) in enumerate(pieces):
        if i + 1 < len(pieces):
            b, b_change = pieces[i + 1][0], True
        else:
            b, b_change = trace_end, False
        lo = a + cfg.guard_s if a_change else a
        hi = b - cfg.guard_s if b_change else b
        if hi - lo >= cfg.t_min_s:
            segments.append(LabeledSegment(lo, hi, state))
    return segments


def segment_at(segments: Sequence[LabeledSegment], ts: float) -> LabeledSegment | None:
    # segments are few (tens); a linear scan is fine
    for seg in segments:
        if seg.contains(ts):
            return seg
    return None


def covering_segment(segments: Sequence[LabeledSegment], a: float, b: float) -> LabeledSegment | None:
    for seg in segments:
        if seg.covers(a, b):
            return seg
    return None


def dumps_segments(segments: Iterable[LabeledSegment]) -> str:
    return "".join(
        json.dumps({"start": round(s.start, 3), "end": round(s.end, 3), "state": s.state.value}) + "\n"
        for s in segments
    )
