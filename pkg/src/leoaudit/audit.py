"""
Policy-state detection over window fingerprints, threshold calibration and
enforcement-delay (grace window) measurement.

A window is high-speed only if its median goodput is strictly above
``t_d_mbps`` *and* its median ratio is strictly below ``t_r``. Anything else
with both medians present is low-rate and gets the nearer plateau center.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import ConfigError, InsufficientDataError, NoSeparationError
from .features import WindowFeature
from .ingest import PolicyState, PortalEvent, ThroughputTest
from .stats import percentile


class PolicyClass(str, enum.Enum):
    HIGH_SPEED = "HighSpeed"
    LOW_RATE_S1 = "LowRateS1"
    LOW_RATE_S3 = "LowRateS3"
    UNKNOWN = "Unknown"

    @classmethod
    def for_state(cls, state: PolicyState) -> "PolicyClass":
        return {
            PolicyState.S1: cls.LOW_RATE_S1,
            PolicyState.S2: cls.HIGH_SPEED,
            PolicyState.S3: cls.LOW_RATE_S3,
            PolicyState.S4: cls.HIGH_SPEED,
        }[state]


@dataclass(frozen=True)
class DetectorConfig:
    t_d_mbps: float = 50.0
    t_r: float = 14.5
    # plateau centers default to the stay-active / post-quota goodput medians
    plateau_s1_mbps: float = 0.4737
    plateau_s3_mbps: float = 0.9153

    def __post_init__(self):
        for name in ("t_d_mbps", "t_r", "plateau_s1_mbps", "plateau_s3_mbps"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {v!r}")
        if not self.plateau_s1_mbps < self.plateau_s3_mbps < self.t_d_mbps:
            raise ConfigError("need plateau_s1_mbps < plateau_s3_mbps < t_d_mbps")


@dataclass(frozen=True)
class GraceConfig:
    cap_mbps: float = 1.0
    onset_factor: float = 1.5
    persistence_tests: int = 2

    def __post_init__(self):
        if not self.cap_mbps > 0:
            raise ConfigError(f"cap_mbps must be > 0, got {self.cap_mbps!r}")
        if not self.onset_factor > 1:
            raise ConfigError(f"onset_factor must be > 1, got {self.onset_factor!r}")
        if self.persistence_tests < 1:
            raise ConfigError("persistence_tests must be a positive integer")


@dataclass(frozen=True)
class GraceReport:
    t_quota_zero: float
    t_throttle_onset: float
    g_duration_s: float

    def to_dict(self) -> dict:
        return {k: round(v, 3) for k, v in asdict(self).items()}


def classify_window(wf: WindowFeature, cfg: DetectorConfig = DetectorConfig()) -> PolicyClass:
    down, r = wf.median_down_mbps, wf.median_r
    if down is None or r is None:
        return PolicyClass.UNKNOWN
    if down > cfg.t_d_mbps and r < cfg.t_r:
        return PolicyClass.HIGH_SPEED
    if abs(down - cfg.plateau_s1_mbps) < abs(down - cfg.plateau_s3_mbps):
        return PolicyClass.LOW_RATE_S1
    return PolicyClass.LOW_RATE_S3


def classify_trace(
    windows: Iterable[WindowFeature], cfg: DetectorConfig = DetectorConfig()
) -> list[tuple[float, PolicyClass]]:
    return [(wf.window_start, classify_window(wf, cfg)) for wf in windows]


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    t_d_mbps: float
    t_r: float
    down_gap: tuple[float, float]
    r_gap: tuple[float, float]
    n_high: int
    n_low: int

    def to_dict(self) -> dict:
        return {
            "proposed": {"t_d_mbps": self.t_d_mbps, "t_r": self.t_r},
            "down_gap_mbps": {"low_rate_p90": self.down_gap[0], "high_speed_p10": self.down_gap[1]},
            "r_gap": {"high_speed_p90": self.r_gap[0], "low_rate_p10": self.r_gap[1]},
            "n_high_speed_windows": self.n_high,
            "n_low_rate_windows": self.n_low,
        }


def calibrate_thresholds(labeled_windows: Iterable[tuple[WindowFeature, PolicyState]]) -> Calibration:
    """Propose (t_d, t_r) as geometric midpoints of the gaps between clusters.

    The throughput gap runs from the low-rate p90 to the high-speed p10 of
    window median goodput; the ratio gap from the high-speed p90 to the
    low-rate p10 of window median R. Empty gaps raise
    :class:`NoSeparationError`, and so does a proposal that misclassifies any
    calibration window, so a returned calibration always separates its own
    training set.
    """
    high, low = [], []
    for wf, state in labeled_windows:
        if not wf.complete:
            continue
        (high if state.is_high_speed else low).append(wf)
    if not high or not low:
        raise InsufficientDataError(
            f"calibration needs both classes with complete windows (high={len(high)}, low={len(low)})")

    down_lo = percentile([w.median_down_mbps for w in low], 90)
    down_hi = percentile([w.median_down_mbps for w in high], 10)
    r_lo = percentile([w.median_r for w in high], 90)
    r_hi = percentile([w.median_r for w in low], 10)
    report = {"down_gap_mbps": [down_lo, down_hi], "r_gap": [r_lo, r_hi],
              "n_high_speed_windows": len(high), "n_low_rate_windows": len(low)}
    if not (0 < down_lo < down_hi) or not (0 < r_lo < r_hi):
        raise NoSeparationError(
            f"clusters overlap: goodput gap ({down_lo:.4g}, {down_hi:.4g}), ratio gap ({r_lo:.4g}, {r_hi:.4g})",
            report)

    t_d = math.sqrt(down_lo * down_hi)
    t_r = math.sqrt(r_lo * r_hi)
    rule = lambda w: w.median_down_mbps > t_d and w.median_r < t_r  # noqa: E731
    missed = sum(1 for w in high if not rule(w))
    false_high = sum(1 for w in low if rule(w))
    if missed or false_high:
        report.update(proposed={"t_d_mbps": t_d, "t_r": t_r},
                      high_speed_rejected=missed, low_rate_accepted=false_high)
        raise NoSeparationError(
            f"proposed thresholds t_d={t_d:.4g}, t_r={t_r:.4g} misclassify "
            f"{missed} high-speed and {false_high} low-rate calibration windows", report)
    return Calibration(t_d, t_r, (down_lo, down_hi), (r_lo, r_hi), len(high), len(low))


# ---------------------------------------------------------------------------
# quota depletion and throttle onset
# ---------------------------------------------------------------------------

def detect_quota_zero(events: Sequence[PortalEvent]) -> float | None:
    """First report of zero remaining quota; else the first transition into S3."""
    for ev in events:
        if ev.quota_remaining_gb is not None and ev.quota_remaining_gb == 0:
            return ev.ts
    prev = None
    for ev in events:
        if ev.state is PolicyState.S3 and prev is not PolicyState.S3:
            return ev.ts
        prev = ev.state
    return None


def detect_throttle_onset(
    tests: Sequence[ThroughputTest], after: float, cfg: GraceConfig = GraceConfig()
) -> float | None:
    bound = cfg.cap_mbps * cfg.onset_factor
    tail = [t for t in tests if t.ts >= after]
    need = cfg.persistence_tests
    for i in range(len(tail) - need + 1):
        if all(t.down_mbps <= bound for t in tail[i:i + need]):
            return tail[i].ts
    return None


def grace_window(
    events: Sequence[PortalEvent], tests: Sequence[ThroughputTest], cfg: GraceConfig = GraceConfig()
) -> GraceReport | None:
    t0 = detect_quota_zero(events)
    if t0 is None:
        return None
    onset = detect_throttle_onset(tests, t0, cfg)
    if onset is None:
        return None
    return GraceReport(t_quota_zero=t0, t_throttle_onset=onset, g_duration_s=onset - t0)
