"""
Seeded trace simulator with exact ground truth.

Policy regimes are modeled as a token bucket (rate caps for the low-rate
states) with tier-dependent queueing delay. Per-test goodput and the
internal-to-user ratio are log-normal, fitted to a target median and p10.
The simulator ticks at 1 Hz; probe events snap to the nearest tick. Each log
draws from its own RNG stream (``SeedSequence`` spawn keys) so adding a new
log type never perturbs the others.

The enforcement-delay window after quota depletion is scripted: goodput
declines linearly between two rates, then steps into the throttled regime.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .audit import PolicyClass
from .errors import ConfigError
from .ingest import (
    PORTAL_FIELDS,
    PROBE_FIELDS,
    TELEMETRY_FIELDS,
    IfaceCounterSample,
    PingProbe,
    PolicyState,
    PortalEvent,
    TelemetrySample,
    ThroughputTest,
    dumps,
)
from .label import LabelConfig, LabeledSegment, extract_segments

Z90 = NormalDist().inv_cdf(0.9)

# stream ids for SeedSequence spawn keys; append, never renumber
STREAM_TELEMETRY = 0
STREAM_SPEEDTEST = 1
STREAM_PING = 2
STREAM_IFACE = 3

# Thu 2025-11-08 00:00:00 UTC, used by the bundled scenarios
DEFAULT_EPOCH = 1_762_560_000.0


# ---------------------------------------------------------------------------
# distributions and regimes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dist:
    """Log-normal target given by ``median [p10, p90]``.

    Only median and p10 enter the fit; p90 is a documented target and the
    achieved value is :meth:`quantile` (0.9).
    """

    median: float
    p10: float
    p90: float

    def __post_init__(self):
        if not (self.p10 > 0 and math.isfinite(self.p90)):
            raise ConfigError(f"distribution targets must be positive and finite: {self}")
        if not self.p10 <= self.median <= self.p90:
            raise ConfigError(f"infeasible targets, need p10 <= median <= p90: {self}")

    @property
    def mu(self) -> float:
        return math.log(self.median)

    @property
    def sigma(self) -> float:
        return (math.log(self.median) - math.log(self.p10)) / Z90

    def quantile(self, q: float) -> float:
        return math.exp(self.mu + self.sigma * NormalDist().inv_cdf(q))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.sigma == 0.0:
            return np.full(n, self.median)
        return rng.lognormal(self.mu, self.sigma, size=n)

    @classmethod
    def from_obj(cls, obj) -> "Dist":
        if isinstance(obj, Dist):
            return obj
        if isinstance(obj, dict):
            return cls(float(obj["median"]), float(obj["p10"]), float(obj["p90"]))
        return cls(*map(float, obj))


@dataclass(frozen=True)
class RegimeSpec:
    state: PolicyState
    down_mbps: Dist
    r: Dist
    pop_rtt_ms: Dist
    cap_mbps: float | None = None
    burst_mbit: float = 0.0
    # host RTT = PoP RTT + exponential offset with this mean
    host_rtt_offset_ms: float = 2.0
    up_fraction: float = 0.1
    ping_loss_p: float = 0.002

    def __post_init__(self):
        capped = self.state in (PolicyState.S1, PolicyState.S3)
        if capped != (self.cap_mbps is not None):
            raise ConfigError(f"{self.state.value}: cap_mbps must be set exactly for S1 and S3")
        if self.cap_mbps is not None and not self.cap_mbps > 0:
            raise ConfigError(f"{self.state.value}: cap_mbps must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeSpec":
        kw = dict(d)
        kw["state"] = PolicyState(kw["state"])
        for k in ("down_mbps", "r", "pop_rtt_ms"):
            kw[k] = Dist.from_obj(kw[k])
        return cls(**kw)


def _table_regime(state, down, r, pop, host_median, **kw) -> RegimeSpec:
    return RegimeSpec(state, Dist(*down), Dist(*r), Dist(*pop),
                      host_rtt_offset_ms=host_median - pop[0], **kw)


_HIGH = dict(down=(154.4406, 46.1167, 250.0403), r=(10.6677, 10.5086, 10.8386),
             pop=(22.6937, 19.2297, 32.0950), host_median=24.911)

# targets are the per-state medians and [p10, p90] of the reference campaign
DEFAULT_REGIMES: dict[PolicyState, RegimeSpec] = {
    PolicyState.S1: _table_regime(
        PolicyState.S1, (0.4737, 0.4093, 0.5226), (21.6361, 18.9336, 25.7945),
        (27.1594, 20.1335, 40.4985), 29.168, cap_mbps=0.55, up_fraction=1.0, ping_loss_p=0.005),
    PolicyState.S2: _table_regime(PolicyState.S2, **_HIGH),
    PolicyState.S3: _table_regime(
        PolicyState.S3, (0.9153, 0.7746, 0.9853), (18.0572, 16.3819, 22.0066),
        (31.6251, 21.8994, 44.7726), 34.861, cap_mbps=1.0, up_fraction=1.0, ping_loss_p=0.005),
    PolicyState.S4: _table_regime(PolicyState.S4, **_HIGH),
}


# ---------------------------------------------------------------------------
# shaping mechanism
# ---------------------------------------------------------------------------

def token_bucket_serve(rate_mbps: float, burst_mbit: float, demand_mbit: Sequence[float]) -> list[float]:
    """Serve per-tick demand through a token bucket at 1 Hz.

    The bucket starts empty. Each tick ``rate_mbps`` tokens arrive on top of
    the carried-over tokens, ``min(demand, available)`` is served, and at most
    ``burst_mbit`` unused tokens carry into the next tick.
    """
    if not rate_mbps > 0:
        raise ConfigError(f"token bucket rate must be > 0, got {rate_mbps!r}")
    if burst_mbit < 0:
        raise ConfigError("burst must be >= 0")
    tokens = 0.0
    served = []
    for d in demand_mbit:
        available = tokens + rate_mbps
        s = min(d, available)
        served.append(s)
        tokens = min(burst_mbit, available - s)
    return served


TEST_TICKS = 10


def sample_regime(spec: RegimeSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` per-test goodput values (Mbps) and matching internal indicators.

    Goodput demand is log-normal; capped regimes run each test's demand
    through the token bucket for ``TEST_TICKS`` ticks and report the mean
    served rate, so the plateau comes out of the shaping mechanism.
    """
    demand = np.clip(spec.down_mbps.sample(rng, n), 0.0, None)
    if spec.cap_mbps is not None:
        served = np.array([
            sum(token_bucket_serve(spec.cap_mbps, spec.burst_mbit, [d] * TEST_TICKS)) / TEST_TICKS
            for d in demand.tolist()
        ])
    else:
        served = demand
    r = spec.r.sample(rng, n)
    return served, r * served


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Depletion:
    t_quota_zero: float
    g_duration_s: float
    decline_from_mbps: float = 200.0
    decline_to_mbps: float = 120.0

    @property
    def t_onset(self) -> float:
        return self.t_quota_zero + self.g_duration_s


@dataclass
class Scenario:
    seed: int
    schedule: list[tuple[float, PolicyState]]
    duration_s: int
    quota_depletion: Depletion | None = None
    telemetry_hz: float = 1.0
    ping_period_s: float = 4.5
    speedtest_period_s: float = 120.0
    iface_period_s: float = 10.0
    initial_quota_gb: float = 50.0
    window_s: float = 180.0
    regimes: dict[PolicyState, RegimeSpec] = field(default_factory=lambda: dict(DEFAULT_REGIMES))

    @property
    def t_start(self) -> float:
        return self.schedule[0][0]

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration_s

    def validate(self) -> None:
        if not self.schedule:
            raise ConfigError("scenario schedule is empty")
        starts = [t for t, _ in self.schedule]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError("schedule start times must be strictly increasing")
        if starts[-1] >= self.t_end:
            raise ConfigError("schedule entry starts after the end of the trace")
        if self.duration_s <= 0 or int(self.duration_s) != self.duration_s:
            raise ConfigError("duration_s must be a positive whole number of seconds")
        step = 1.0 / self.telemetry_hz if self.telemetry_hz > 0 else 0
        if not (0 < self.telemetry_hz <= 1 and float(step).is_integer()):
            raise ConfigError("telemetry_hz must be 1/k for a positive integer k")
        for name in ("ping_period_s", "speedtest_period_s", "iface_period_s", "window_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        missing = {s for _, s in self.schedule} - set(self.regimes)
        if missing:
            raise ConfigError(f"no regime spec for states {sorted(m.value for m in missing)}")
        dep = self.quota_depletion
        if dep is not None:
            if dep.g_duration_s < 0 or dep.decline_from_mbps <= 0 or dep.decline_to_mbps <= 0:
                raise ConfigError("depletion needs g_duration_s >= 0 and positive decline rates")
            i = int(np.searchsorted(starts, dep.t_quota_zero, side="right")) - 1
            if i < 0 or self.schedule[i][1] is not PolicyState.S2:
                raise ConfigError("quota depletion must fall inside an S2 interval")
            if i + 1 >= len(self.schedule) or self.schedule[i + 1][1] is not PolicyState.S3:
                raise ConfigError("the S2 interval holding the depletion must be followed by S3")
            if not math.isclose(starts[i + 1], dep.t_onset, abs_tol=1e-9):
                raise ConfigError(
                    f"S3 must start at throttle onset t_quota_zero + G = {dep.t_onset}, "
                    f"schedule says {starts[i + 1]}")

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "schedule": [[t, s.value] for t, s in self.schedule],
            "duration_s": self.duration_s,
            "quota_depletion": None if self.quota_depletion is None else vars(self.quota_depletion).copy(),
            "telemetry_hz": self.telemetry_hz,
            "ping_period_s": self.ping_period_s,
            "speedtest_period_s": self.speedtest_period_s,
            "iface_period_s": self.iface_period_s,
            "initial_quota_gb": self.initial_quota_gb,
            "window_s": self.window_s,
            "regimes": {},
        }
        for st, spec in self.regimes.items():
            sd = {k: v for k, v in vars(spec).items()}
            sd["state"] = st.value
            for k in ("down_mbps", "r", "pop_rtt_ms"):
                sd[k] = vars(sd[k]).copy()
            d["regimes"][st.value] = sd
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            kw = {k: d[k] for k in ("seed", "schedule", "duration_s")}
        except KeyError as exc:
            raise ConfigError(f"scenario lacks required field {exc}") from None
        kw["seed"] = int(kw["seed"])
        kw["schedule"] = [(float(t), PolicyState(s)) for t, s in kw["schedule"]]
        kw["duration_s"] = int(kw["duration_s"])
        if d.get("quota_depletion"):
            kw["quota_depletion"] = Depletion(**{k: float(v) for k, v in d["quota_depletion"].items()})
        for k in ("telemetry_hz", "ping_period_s", "speedtest_period_s", "iface_period_s",
                  "initial_quota_gb", "window_s"):
            if k in d:
                kw[k] = float(d[k])
        regimes = dict(DEFAULT_REGIMES)
        for key, spec in (d.get("regimes") or {}).items():
            if spec.get("state", key) != key:
                raise ConfigError(f"regime {key!r} declares state {spec['state']!r}")
            spec = {**spec, "state": key}
            regimes[PolicyState(key)] = RegimeSpec.from_dict(spec)
        kw["regimes"] = regimes
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad scenario file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

@dataclass
class GroundTruth:
    segments: list[LabeledSegment]
    t_quota_zero: float | None
    t_throttle_onset: float | None
    window_s: float
    # None for windows straddling a class change
    window_classes: list[tuple[float, PolicyClass | None]]

    def class_at(self, window_start: float) -> PolicyClass | None:
        return dict(self.window_classes).get(window_start)

    def to_dict(self) -> dict:
        return {
            "segments": [{"start": round(s.start, 3), "end": round(s.end, 3), "state": s.state.value}
                         for s in self.segments],
            "t_quota_zero": self.t_quota_zero,
            "t_throttle_onset": self.t_throttle_onset,
            "g_duration_s": (None if self.t_quota_zero is None
                             else self.t_throttle_onset - self.t_quota_zero),
            "window_s": self.window_s,
            "window_classes": [[round(t, 3), None if c is None else c.value] for t, c in self.window_classes],
        }


def true_window_classes(scenario: Scenario, window_s: float | None = None) -> list[tuple[float, PolicyClass | None]]:
    """Class in force over each whole window; ``None`` when a window spans a change.

    The enforcement-delay window counts as high-speed, as does every S2/S4 tick.
    """
    W = window_s or scenario.window_s
    runs: list[list] = []  # [start, end, class], adjacent equal classes merged
    bounds = [t for t, _ in scenario.schedule[1:]] + [scenario.t_end]
    for (start, state), end in zip(scenario.schedule, bounds):
        cls = PolicyClass.for_state(state)
        if runs and runs[-1][2] is cls:
            runs[-1][1] = end
        else:
            runs.append([start, end, cls])
    out = []
    n = math.ceil(scenario.duration_s / W)
    for k in range(n):
        a = scenario.t_start + k * W
        b = min(a + W, scenario.t_end)
        cls = next((c for s, e, c in runs if s <= a and b <= e), None)
        out.append((a, cls))
    return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class SimOutput:
    scenario: Scenario
    telemetry: list[TelemetrySample]
    pings: list[PingProbe]
    tests: list[ThroughputTest]
    iface: list[IfaceCounterSample]
    portal: list[PortalEvent]
    truth: GroundTruth

    def probe_records(self) -> list:
        order = {IfaceCounterSample: 0, PingProbe: 1, ThroughputTest: 2}
        return sorted([*self.iface, *self.pings, *self.tests], key=lambda r: (r.ts, order[type(r)]))

    def files(self, fmt: str = "jsonl") -> dict[str, str]:
        ext = "csv" if fmt == "csv" else "jsonl"
        return {
            f"telemetry.{ext}": dumps(self.telemetry, fmt, TELEMETRY_FIELDS),
            f"probes.{ext}": dumps(self.probe_records(), fmt, PROBE_FIELDS),
            f"portal.{ext}": dumps(self.portal, fmt, PORTAL_FIELDS),
            "ground_truth.json": json.dumps(self.truth.to_dict(), indent=1, sort_keys=True) + "\n",
        }

    def write(self, out_dir: str | Path, fmt: str = "jsonl") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in self.files(fmt).items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            paths[name] = p
        return paths


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def _snap(times: np.ndarray) -> np.ndarray:
    return np.floor(times + 0.5).astype(np.int64)


def simulate(scenario: Scenario) -> SimOutput:
    scenario.validate()
    sc = scenario
    n_ticks = int(sc.duration_s)
    t0 = sc.t_start
    ticks = t0 + np.arange(n_ticks, dtype=float)
    starts = np.array([t for t, _ in sc.schedule])
    states = [s for _, s in sc.schedule]
    tick_piece = np.searchsorted(starts, ticks, side="right") - 1
    tick_state = np.array([states[i].value for i in tick_piece])
    dep = sc.quota_depletion

    # --- speedtests: goodput and the internal indicator at test time
    rng = _rng(sc.seed, STREAM_SPEEDTEST)
    test_idx = _snap(np.arange(0.0, n_ticks, sc.speedtest_period_s))
    test_idx = test_idx[test_idx < n_ticks]
    tests: list[ThroughputTest] = []
    test_cint: list[float] = []
    for i in test_idx.tolist():
        ts = float(ticks[i])
        spec = sc.regimes[PolicyState(tick_state[i])]
        if dep is not None and dep.t_quota_zero <= ts < dep.t_onset:
            frac = (ts - dep.t_quota_zero) / dep.g_duration_s
            down = dep.decline_from_mbps + (dep.decline_to_mbps - dep.decline_from_mbps) * frac
            c_int = float(spec.r.sample(rng, 1)[0]) * down
        else:
            d, c = sample_regime(spec, 1, rng)
            down, c_int = float(d[0]), float(c[0])
        tests.append(ThroughputTest(ts=ts, down_mbps=round(down, 4), up_mbps=round(down * spec.up_fraction, 4)))
        test_cint.append(c_int)

    # --- telemetry at 1 Hz (or a divisor of it)
    rng = _rng(sc.seed, STREAM_TELEMETRY)
    pop_rtt = np.empty(n_ticks)
    bg_down = np.empty(n_ticks)
    ratio = np.empty(n_ticks)
    for st in PolicyState:
        mask = tick_state == st.value
        k = int(mask.sum())
        if not k:
            continue
        spec = sc.regimes[st]
        pop_rtt[mask] = spec.pop_rtt_ms.sample(rng, k)
        bg = rng.lognormal(math.log(0.02), 0.5, size=k)
        bg_down[mask] = np.minimum(bg, spec.cap_mbps) if spec.cap_mbps else bg
        ratio[mask] = spec.r.sample(rng, k)
    lossy = rng.random(n_ticks) < 0.02
    loss = np.where(lossy, rng.uniform(0.0, 0.1, n_ticks), 0.0)
    obstructed = rng.random(n_ticks) < 0.001

    down_mbps = bg_down.copy()
    up_mbps = bg_down * 0.5
    c_int = bg_down * ratio
    for t, i, ci in zip(tests, test_idx.tolist(), test_cint):
        j = min(i + TEST_TICKS, n_ticks)
        down_mbps[i:j] = t.down_mbps
        up_mbps[i:j] = t.up_mbps
        c_int[i:j] = ci

    step = int(round(1.0 / sc.telemetry_hz))
    telemetry = [
        TelemetrySample(ts=ts, downlink_throughput_bps=round(ci * 1e6, 1),
                        uplink_throughput_bps=round(up * 1.05e6, 1), pop_rtt_ms=round(rtt, 3),
                        pop_loss_fraction=round(ls, 4), obstructed=ob)
        for ts, ci, up, rtt, ls, ob in zip(
            ticks[::step].tolist(), c_int[::step].tolist(), up_mbps[::step].tolist(),
            pop_rtt[::step].tolist(), loss[::step].tolist(), obstructed[::step].tolist())
    ]

    # --- ping trains: host RTT = PoP RTT + positive offset
    rng = _rng(sc.seed, STREAM_PING)
    ping_idx = _snap(np.arange(0.0, n_ticks, sc.ping_period_s))
    ping_idx = ping_idx[ping_idx < n_ticks]
    offsets = np.array([sc.regimes[PolicyState(tick_state[i])].host_rtt_offset_ms for i in ping_idx.tolist()])
    loss_p = np.array([sc.regimes[PolicyState(tick_state[i])].ping_loss_p for i in ping_idx.tolist()])
    host = pop_rtt[ping_idx] + rng.exponential(1.0, len(ping_idx)) * offsets
    lost = rng.binomial(4, loss_p)
    pings = [PingProbe(ts=float(ticks[i]), avg_rtt_ms=round(h, 3), loss_fraction=k / 4, n_probes=4)
             for i, h, k in zip(ping_idx.tolist(), host.tolist(), lost.tolist())]

    # --- interface byte counters (cumulative)
    rng = _rng(sc.seed, STREAM_IFACE)
    base = rng.integers(0, 2**31, size=2)
    rx = base[0] + np.floor(np.cumsum(down_mbps) * 1e6 / 8).astype(np.int64)
    tx = base[1] + np.floor(np.cumsum(up_mbps) * 1e6 / 8).astype(np.int64)
    if_idx = _snap(np.arange(0.0, n_ticks, sc.iface_period_s))
    if_idx = if_idx[if_idx < n_ticks]
    iface = [IfaceCounterSample(ts=float(ticks[i]), rx_bytes=int(rx[i]), tx_bytes=int(tx[i]))
             for i in if_idx.tolist()]

    portal = _portal_events(sc)
    segments = extract_segments(portal, sc.t_start, sc.t_end, LabelConfig())
    truth = GroundTruth(
        segments=segments,
        t_quota_zero=None if dep is None else dep.t_quota_zero,
        t_throttle_onset=None if dep is None else dep.t_onset,
        window_s=sc.window_s,
        window_classes=true_window_classes(sc),
    )
    return SimOutput(sc, telemetry, pings, tests, iface, portal, truth)


def _portal_events(sc: Scenario) -> list[PortalEvent]:
    quota = {PolicyState.S2: sc.initial_quota_gb, PolicyState.S3: 0.0}
    events = [PortalEvent(t, s, quota.get(s)) for t, s in sc.schedule]
    dep = sc.quota_depletion
    if dep is not None:
        events.append(PortalEvent(dep.t_quota_zero, PolicyState.S2, 0.0))
        events.sort(key=lambda e: e.ts)
    return events


# ---------------------------------------------------------------------------
# bundled scenarios
# ---------------------------------------------------------------------------

HOUR = 3600


def plan_hop_scenario(seed: int = 1108, g_duration_s: float = 480.0, t0: float = DEFAULT_EPOCH) -> Scenario:
    """24 h trace visiting every state, seven switches, one scripted depletion."""
    plan = [(0, PolicyState.S1), (3, PolicyState.S2), (6, PolicyState.S3), (9, PolicyState.S4),
            (12, PolicyState.S1), (15, PolicyState.S2), (18, PolicyState.S3), (21, PolicyState.S4)]
    schedule = [(t0 + h * HOUR, s) for h, s in plan]
    onset = t0 + 6 * HOUR
    return Scenario(
        seed=seed,
        schedule=schedule,
        duration_s=24 * HOUR,
        quota_depletion=Depletion(onset - g_duration_s, g_duration_s),
    )


def grace_scenario(seed: int, g_duration_s: float, t0: float = DEFAULT_EPOCH + 3 * HOUR) -> Scenario:
    """Two-hour S2 -> S3 trace with the depletion one hour in, onset G later."""
    t_zero = t0 + HOUR
    return Scenario(
        seed=seed,
        schedule=[(t0, PolicyState.S2), (t_zero + g_duration_s, PolicyState.S3)],
        duration_s=int(2 * HOUR + g_duration_s),
        quota_depletion=Depletion(t_zero, g_duration_s),
    )


def repeated_switch_scenario(
    seed: int,
    pairs: Sequence[tuple[PolicyState, PolicyState]],
    repetitions: int = 5,
    dwell_s: int = 2 * HOUR,
    t0: float = DEFAULT_EPOCH,
) -> Scenario:
    """Each ``a -> b`` plan switch in ``pairs`` performed ``repetitions`` times."""
    seq = [s for a, b in pairs for _ in range(repetitions) for s in (a, b)]
    # merge accidental repeats so every schedule entry is a genuine change
    states = [s for i, s in enumerate(seq) if i == 0 or seq[i - 1] != s]
    schedule = [(t0 + i * dwell_s, s) for i, s in enumerate(states)]
    return Scenario(seed=seed, schedule=schedule, duration_s=len(states) * dwell_s)
