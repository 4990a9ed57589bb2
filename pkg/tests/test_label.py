import pytest
from hypothesis import given, strategies as st

from leoaudit.errors import AmbiguousPortalStateError, ConfigError, PreconditionError
from leoaudit.ingest import PolicyState as S, PortalEvent
from leoaudit.label import LabelConfig, LabeledSegment, extract_segments

CFG = LabelConfig(guard_s=120, t_min_s=600)


def ev(ts, state, quota=None):
    return PortalEvent(float(ts), state, quota)


def test_single_event_no_guards():
    assert extract_segments([ev(0, S.S2)], 0, 10_000, CFG) == [LabeledSegment(0, 10_000, S.S2)]


def test_guards_around_one_change():
    got = extract_segments([ev(0, S.S2), ev(5000, S.S3)], 0, 10_000, CFG)
    assert got == [LabeledSegment(0, 4880, S.S2), LabeledSegment(5120, 10_000, S.S3)]


def test_short_interval_dropped():
    got = extract_segments([ev(0, S.S1), ev(700, S.S2), ev(1000, S.S1)], 0, 10_000, CFG)
    # S1 [0, 580] is also shorter than 600; S2 trims to [820, 880]
    assert got == [LabeledSegment(1120, 10_000, S.S1)]


def test_repeated_same_state_reports_are_not_changes():
    got = extract_segments([ev(0, S.S2, 50), ev(3000, S.S2, 0), ev(5000, S.S3, 0)], 0, 10_000, CFG)
    assert got == [LabeledSegment(0, 4880, S.S2), LabeledSegment(5120, 10_000, S.S3)]


def test_unlabeled_prefix_and_latest_prior_event():
    assert extract_segments([ev(2000, S.S4)], 0, 10_000, CFG) == [LabeledSegment(2120, 10_000, S.S4)]
    got = extract_segments([ev(-500, S.S1), ev(-100, S.S3)], 0, 5000, CFG)
    assert got == [LabeledSegment(0, 5000, S.S3)]


def test_errors():
    with pytest.raises(PreconditionError):
        extract_segments([ev(10, S.S1), ev(5, S.S2)], 0, 100, CFG)
    with pytest.raises(AmbiguousPortalStateError):
        extract_segments([ev(10, S.S1), ev(10, S.S2)], 0, 100, CFG)
    with pytest.raises(ConfigError):
        LabelConfig(guard_s=-1)
    with pytest.raises(ConfigError):
        LabelConfig(t_min_s=0)


@st.composite
def schedules(draw):
    n = draw(st.integers(1, 12))
    gaps = draw(st.lists(st.integers(1, 4000), min_size=n, max_size=n))
    states = draw(st.lists(st.sampled_from(list(S)), min_size=n, max_size=n))
    t, events = -draw(st.integers(0, 500)), []
    for g, s in zip(gaps, states):
        events.append(ev(t, s))
        t += g
    end = t + draw(st.integers(0, 3000))
    guard = draw(st.sampled_from([0.0, 60.0, 120.0]))
    t_min = draw(st.sampled_from([1.0, 300.0, 600.0]))
    return events, 0.0, float(max(end, 0)), LabelConfig(guard, t_min)


@given(schedules())
def test_segment_invariants(case):
    events, start, end, cfg = case
    segs = extract_segments(events, start, end, cfg)
    changes = [b.ts for a, b in zip(events, events[1:]) if a.state != b.state and start < b.ts < end]
    # state in force at each instant, from the raw events
    def state_at(t):
        prior = [e for e in events if e.ts <= t]
        return prior[-1].state if prior else None

    for seg in segs:
        assert seg.length >= cfg.t_min_s
        assert start <= seg.start and seg.end <= end
        for c in changes:
            assert seg.end <= c - cfg.guard_s or seg.start >= c + cfg.guard_s
        # whole segment lies inside one constant-state interval
        assert state_at(seg.start) == seg.state
        assert not any(seg.start < c < seg.end for c in changes)
    for a, b in zip(segs, segs[1:]):
        assert a.end <= b.start
    assert extract_segments(events, start, end, cfg) == segs
