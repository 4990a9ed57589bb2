"""
Parsing and normalization of the three log streams.

Canonical formats are JSONL (one object per line) and CSV (header row),
both keyed by the dataclass field names below. Every non-blank input line
ends up either as a record or as a :class:`Reject`; nothing is dropped
silently. Timestamps are UTC epoch seconds; no timezone handling happens here.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, BinaryIO, Callable, Iterable, Iterator, Sequence, TypeVar, Union

from .errors import FormatError, UnreadableStreamError

REJECT_LIMIT = 0.5


class PolicyState(str, enum.Enum):
    """Nominal plan/quota state reported by the account portal."""

    S1 = "S1"  # stay-active
    S2 = "S2"  # priority, pre-quota
    S3 = "S3"  # post-quota throttled
    S4 = "S4"  # residential

    @property
    def is_high_speed(self) -> bool:
        return self in (PolicyState.S2, PolicyState.S4)


@dataclass(frozen=True)
class TelemetrySample:
    ts: float
    downlink_throughput_bps: float
    uplink_throughput_bps: float
    pop_rtt_ms: float
    pop_loss_fraction: float
    obstructed: bool = False


@dataclass(frozen=True)
class PingProbe:
    ts: float
    avg_rtt_ms: float
    loss_fraction: float
    n_probes: int = 4


@dataclass(frozen=True)
class ThroughputTest:
    ts: float
    down_mbps: float
    up_mbps: float


@dataclass(frozen=True)
class IfaceCounterSample:
    ts: float
    rx_bytes: int
    tx_bytes: int
    # assigned by normalize_timeline; a counter decrease opens a new epoch
    epoch: int = 0


@dataclass(frozen=True)
class PortalEvent:
    ts: float
    state: PolicyState
    quota_remaining_gb: float | None = None


@dataclass(frozen=True)
class Reject:
    line_number: int
    raw_line: str
    reason: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ParseResult:
    records: list
    rejects: list[Reject] = field(default_factory=list)

    @property
    def n_lines(self) -> int:
        return len(self.records) + len(self.rejects)


@dataclass
class ProbeParseResult:
    pings: list[PingProbe]
    tests: list[ThroughputTest]
    iface: list[IfaceCounterSample]
    rejects: list[Reject] = field(default_factory=list)

    @property
    def n_lines(self) -> int:
        return len(self.pings) + len(self.tests) + len(self.iface) + len(self.rejects)


class RecordError(ValueError):
    """One record failed validation; the message becomes the reject reason."""


# ---------------------------------------------------------------------------
# field coercion
# ---------------------------------------------------------------------------

def _real(raw: dict, key: str, lo: float | None = 0.0, hi: float | None = None) -> float:
    if key not in raw or raw[key] is None or raw[key] == "":
        raise RecordError(f"missing field {key!r}")
    v = raw[key]
    if isinstance(v, bool):
        raise RecordError(f"{key}: boolean where number expected")
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise RecordError(f"{key}: not a number: {v!r}") from None
    if not math.isfinite(x):
        raise RecordError(f"{key}: non-finite value {v!r}")
    if lo is not None and x < lo:
        raise RecordError(f"{key}={x!r} below {lo}")
    if hi is not None and x > hi:
        raise RecordError(f"{key}={x!r} above {hi}")
    return x


def _optional_real(raw: dict, key: str) -> float | None:
    if raw.get(key) is None or raw.get(key) == "":
        return None
    return _real(raw, key)


def _count(raw: dict, key: str, minimum: int = 0) -> int:
    if key not in raw or raw[key] is None or raw[key] == "":
        raise RecordError(f"missing field {key!r}")
    v = raw[key]
    if isinstance(v, bool) or isinstance(v, float):
        raise RecordError(f"{key}: integer expected, got {v!r}")
    try:
        n = int(v)
    except (TypeError, ValueError):
        raise RecordError(f"{key}: integer expected, got {v!r}") from None
    if n < minimum:
        raise RecordError(f"{key}={n} below {minimum}")
    return n


_TRUE = {"true", "1", "yes"}
_FALSE = {"false", "0", "no", ""}


def _flag(raw: dict, key: str) -> bool:
    v = raw.get(key, False)
    if v is None:
        return False
    if isinstance(v, bool):
        return v
    if isinstance(v, int) and v in (0, 1):
        return bool(v)
    s = str(v).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise RecordError(f"{key}: not a boolean: {v!r}")


def _state(raw: dict) -> PolicyState:
    v = raw.get("state")
    try:
        return PolicyState(v)
    except ValueError:
        raise RecordError(f"unknown portal state {v!r}") from None


def telemetry_from_dict(raw: dict) -> TelemetrySample:
    return TelemetrySample(
        ts=_real(raw, "ts"),
        downlink_throughput_bps=_real(raw, "downlink_throughput_bps"),
        uplink_throughput_bps=_real(raw, "uplink_throughput_bps"),
        pop_rtt_ms=_real(raw, "pop_rtt_ms"),
        pop_loss_fraction=_real(raw, "pop_loss_fraction", 0.0, 1.0),
        obstructed=_flag(raw, "obstructed"),
    )


def ping_from_dict(raw: dict) -> PingProbe:
    return PingProbe(
        ts=_real(raw, "ts"),
        avg_rtt_ms=_real(raw, "avg_rtt_ms"),
        loss_fraction=_real(raw, "loss_fraction", 0.0, 1.0),
        n_probes=_count(raw, "n_probes", minimum=1),
    )


def speedtest_from_dict(raw: dict) -> ThroughputTest:
    return ThroughputTest(
        ts=_real(raw, "ts"),
        down_mbps=_real(raw, "down_mbps"),
        up_mbps=_real(raw, "up_mbps"),
    )


def iface_from_dict(raw: dict) -> IfaceCounterSample:
    return IfaceCounterSample(
        ts=_real(raw, "ts"),
        rx_bytes=_count(raw, "rx_bytes"),
        tx_bytes=_count(raw, "tx_bytes"),
    )


def portal_from_dict(raw: dict) -> PortalEvent:
    return PortalEvent(
        ts=_real(raw, "ts"),
        state=_state(raw),
        quota_remaining_gb=_optional_real(raw, "quota_remaining_gb"),
    )


PROBE_KINDS: dict[str, Callable[[dict], Any]] = {
    "ping": ping_from_dict,
    "speedtest": speedtest_from_dict,
    "iface": iface_from_dict,
}

# ---------------------------------------------------------------------------
# line readers
# ---------------------------------------------------------------------------

Source = Union[bytes, str, Path, BinaryIO]


def _read_text(source: Source) -> str:
    try:
        if isinstance(source, bytes):
            data = source
        elif isinstance(source, (str, Path)):
            data = Path(source).read_bytes()
        else:
            data = source.read()
        return data.decode("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableStreamError(f"cannot read log stream: {exc}") from exc


def _jsonl_rows(text: str) -> Iterator[tuple[int, str, dict | None, str]]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield lineno, line, None, f"invalid JSON: {exc.msg}"
            continue
        if not isinstance(obj, dict):
            yield lineno, line, None, "JSON value is not an object"
            continue
        yield lineno, line, obj, ""


def _csv_rows(text: str, required: Sequence[str]) -> Iterator[tuple[int, str, dict | None, str]]:
    lines = text.splitlines()
    header_idx = next((i for i, line in enumerate(lines) if line.strip()), None)
    if header_idx is None:
        return
    header = next(csv.reader([lines[header_idx]]))
    missing = [k for k in required if k not in header]
    if missing:
        raise FormatError(f"CSV header lacks columns {missing} (line {header_idx + 1})")
    for i in range(header_idx + 1, len(lines)):
        line = lines[i]
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            yield i + 1, line, None, f"expected {len(header)} cells, got {len(cells)}"
            continue
        yield i + 1, line, dict(zip(header, cells)), ""


def _rows(text: str, fmt: str, required: Sequence[str]):
    if fmt == "jsonl":
        return _jsonl_rows(text)
    if fmt == "csv":
        return _csv_rows(text, required)
    raise FormatError(f"unknown log format {fmt!r}; expected 'jsonl' or 'csv'")


def _check_reject_rate(what: str, n_ok: int, rejects: list[Reject]) -> None:
    total = n_ok + len(rejects)
    if total and len(rejects) / total > REJECT_LIMIT:
        first = rejects[0]
        raise FormatError(
            f"{what}: {len(rejects)} of {total} records rejected; wrong file? "
            f"first reject at line {first.line_number}: {first.reason}"
        )


def format_of(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    return "csv" if suffix == ".csv" else "jsonl"


def _parse_simple(source: Source, fmt: str, build: Callable[[dict], Any], required, what) -> ParseResult:
    out = ParseResult(records=[])
    for lineno, line, obj, reason in _rows(_read_text(source), fmt, required):
        if obj is None:
            out.rejects.append(Reject(lineno, line, reason))
            continue
        try:
            out.records.append(build(obj))
        except RecordError as exc:
            out.rejects.append(Reject(lineno, line, str(exc)))
    _check_reject_rate(what, len(out.records), out.rejects)
    return out


TELEMETRY_FIELDS = ("ts", "downlink_throughput_bps", "uplink_throughput_bps",
                    "pop_rtt_ms", "pop_loss_fraction", "obstructed")
PROBE_FIELDS = ("kind", "ts", "avg_rtt_ms", "loss_fraction", "n_probes",
                "down_mbps", "up_mbps", "rx_bytes", "tx_bytes")
PORTAL_FIELDS = ("ts", "state", "quota_remaining_gb")


def parse_telemetry(source: Source, fmt: str = "jsonl") -> ParseResult:
    return _parse_simple(source, fmt, telemetry_from_dict, ("ts",), "telemetry")


def parse_portal(source: Source, fmt: str = "jsonl") -> ParseResult:
    return _parse_simple(source, fmt, portal_from_dict, ("ts", "state"), "portal")


def parse_probes(source: Source, fmt: str = "jsonl") -> ProbeParseResult:
    out = ProbeParseResult(pings=[], tests=[], iface=[])
    sinks = {"ping": out.pings, "speedtest": out.tests, "iface": out.iface}
    for lineno, line, obj, reason in _rows(_read_text(source), fmt, ("kind", "ts")):
        if obj is None:
            out.rejects.append(Reject(lineno, line, reason))
            continue
        kind = obj.get("kind")
        if kind not in PROBE_KINDS:
            out.rejects.append(Reject(lineno, line, f"unknown record kind {kind!r}"))
            continue
        try:
            sinks[kind].append(PROBE_KINDS[kind](obj))
        except RecordError as exc:
            out.rejects.append(Reject(lineno, line, str(exc)))
    _check_reject_rate("probes", out.n_lines - len(out.rejects), out.rejects)
    return out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

T = TypeVar("T")


def normalize_timeline(samples: Iterable[T]) -> list[T]:
    """Sort by ``ts``; on exact duplicate timestamps the later record wins.

    Interface counter samples additionally get an ``epoch`` number that
    increments whenever either cumulative counter decreases.
    """
    ordered = sorted(enumerate(samples), key=lambda p: (p[1].ts, p[0]))
    out: list = []
    for _, s in ordered:
        if out and out[-1].ts == s.ts:
            out[-1] = s
        else:
            out.append(s)
    if out and isinstance(out[0], IfaceCounterSample):
        out = _assign_epochs(out)
    return out


def _assign_epochs(samples: list[IfaceCounterSample]) -> list[IfaceCounterSample]:
    epoch = 0
    result = []
    prev = None
    for s in samples:
        if prev is not None and (s.rx_bytes < prev.rx_bytes or s.tx_bytes < prev.tx_bytes):
            epoch += 1
        result.append(replace(s, epoch=epoch))
        prev = s
    return result


def iface_rates_mbps(samples: Sequence[IfaceCounterSample]) -> list[tuple[float, float, float]]:
    """``(ts, rx_mbps, tx_mbps)`` from consecutive normalized counter samples.

    Deltas are never taken across an epoch boundary.
    """
    rates = []
    for a, b in zip(samples, samples[1:]):
        dt = b.ts - a.ts
        if a.epoch != b.epoch or dt <= 0:
            continue
        rates.append((b.ts, (b.rx_bytes - a.rx_bytes) * 8 / dt / 1e6,
                      (b.tx_bytes - a.tx_bytes) * 8 / dt / 1e6))
    return rates


# ---------------------------------------------------------------------------
# serialization (inverse of the parsers)
# ---------------------------------------------------------------------------

def record_to_dict(rec) -> dict:
    d = {}
    for f in fields(rec):
        if f.name == "epoch":
            continue
        v = getattr(rec, f.name)
        d[f.name] = v.value if isinstance(v, enum.Enum) else v
    if isinstance(rec, PingProbe):
        d = {"kind": "ping", **d}
    elif isinstance(rec, ThroughputTest):
        d = {"kind": "speedtest", **d}
    elif isinstance(rec, IfaceCounterSample):
        d = {"kind": "iface", **d}
    return d


def dumps_jsonl(records: Iterable) -> str:
    return "".join(json.dumps(record_to_dict(r)) + "\n" for r in records)


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_csv(records: Iterable, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        d = record_to_dict(r)
        w.writerow([_csv_cell(d.get(c)) for c in columns])
    return buf.getvalue()


def dumps(records: Iterable, fmt: str, columns: Sequence[str]) -> str:
    return dumps_csv(records, columns) if fmt == "csv" else dumps_jsonl(records)


def dumps_rejects(rejects: Iterable[Reject]) -> str:
    return "".join(r.to_json() + "\n" for r in rejects)
