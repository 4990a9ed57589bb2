"""
Command-line front end.

    leoaudit simulate --out run/                     # bundled 24 h plan-hopping trace
    leoaudit report --telemetry run/telemetry.jsonl --probes run/probes.jsonl \\
                    --portal run/portal.jsonl --out run/report

Settings resolve as flags > config file (``--config`` or $LEOAUDIT_CONFIG) > defaults.
Exit codes: 0 ok, 1 usage, 2 input format, 3 no separation, 4 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
import traceback
from pathlib import Path
from typing import Any

from . import __version__
from .audit import DetectorConfig, GraceConfig, calibrate_thresholds, classify_trace, grace_window
from .errors import AuditError, ConfigError, NoSeparationError, stage
from .features import FeatureConfig, align_ratios, window_features
from .ingest import dumps_rejects, format_of, normalize_timeline, parse_portal, parse_probes, parse_telemetry
from .label import LabelConfig, dumps_segments, extract_segments
from .pipeline import AuditConfig, load_inputs, run_audit
from .report import calibration_json, detections_csv, features_csv, grace_json, write_bundle
from .sim import Scenario, plan_hop_scenario, simulate

CONFIG_ENV = "LEOAUDIT_CONFIG"

log = logging.getLogger("leoaudit")

# flag dest -> (config-file key, type)
SETTINGS: dict[str, tuple[str, type]] = {
    "telemetry": ("telemetry", str),
    "probes": ("probes", str),
    "portal": ("portal", str),
    "scenario": ("scenario", str),
    "out": ("out", str),
    "format": ("format", str),
    "window_s": ("window_s", float),
    "align_tol_s": ("align_tol_s", float),
    "min_tests": ("min_tests_per_window", int),
    "guard_s": ("guard_s", float),
    "t_min_s": ("t_min_s", float),
    "td_mbps": ("td_mbps", float),
    "tr": ("tr", float),
    "plateau_s1": ("plateau_s1", float),
    "plateau_s3": ("plateau_s3", float),
    "cap_mbps": ("cap_mbps", float),
    "onset_factor": ("onset_factor", float),
    "persistence": ("persistence_tests", int),
    "seed": ("seed", int),
}


class UsageExit(argparse.ArgumentParser):
    """Argument errors exit with status 1, not argparse's 2 (reserved for bad input)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    io = p.add_argument_group("inputs and outputs")
    io.add_argument("--telemetry", default=S, help="terminal telemetry log (.jsonl or .csv)")
    io.add_argument("--probes", default=S, help="host probe log (.jsonl or .csv)")
    io.add_argument("--portal", default=S, help="portal plan/quota event log")
    io.add_argument("--scenario", default=S, help="simulator scenario.json")
    io.add_argument("--out", default=S, help="output directory (stdout if omitted, where possible)")
    io.add_argument("--format", choices=["jsonl", "csv"], default=S, help="log format written by simulate")
    io.add_argument("--config", default=S, help=f"JSON settings file (default ${CONFIG_ENV})")
    io.add_argument("--seed", type=int, default=S, help="override scenario seed")
    g = p.add_argument_group("analysis settings")
    g.add_argument("--window-s", dest="window_s", type=float, default=S)
    g.add_argument("--align-tol-s", dest="align_tol_s", type=float, default=S)
    g.add_argument("--min-tests", dest="min_tests", type=int, default=S)
    g.add_argument("--guard-s", dest="guard_s", type=float, default=S)
    g.add_argument("--t-min-s", dest="t_min_s", type=float, default=S)
    g.add_argument("--td-mbps", dest="td_mbps", type=float, default=S)
    g.add_argument("--tr", type=float, default=S)
    g.add_argument("--plateau-s1", dest="plateau_s1", type=float, default=S)
    g.add_argument("--plateau-s3", dest="plateau_s3", type=float, default=S)
    g.add_argument("--cap-mbps", dest="cap_mbps", type=float, default=S)
    g.add_argument("--onset-factor", dest="onset_factor", type=float, default=S)
    g.add_argument("--persistence", type=int, default=S)
    return p


COMMANDS = {
    "validate": "parse-only pass: counts, rejects, time span, cadence and gaps",
    "label": "portal events -> guard-trimmed stable segments",
    "features": "per-window goodput / ratio / PoP RTT medians",
    "detect": "classify windows with the threshold rule",
    "calibrate": "propose thresholds from labeled windows",
    "grace": "quota-zero time, throttle onset and enforcement delay",
    "simulate": "generate a seeded trace with ground truth",
    "report": "full audit bundle (tables, plot data, detections, confusion)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = UsageExit(prog="leoaudit", description=__doc__.split("\n\n")[1].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common()
    for name, help_text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


# ---------------------------------------------------------------------------
# settings
# ---------------------------------------------------------------------------

def resolve_settings(args: argparse.Namespace) -> dict[str, Any]:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    file_cfg: dict = {}
    if path:
        try:
            file_cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        known = {key for key, _ in SETTINGS.values()}
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
    settings = {}
    for dest, (key, typ) in SETTINGS.items():
        if hasattr(args, dest):
            settings[dest] = getattr(args, dest)
        elif key in file_cfg and file_cfg[key] is not None:
            try:
                settings[dest] = typ(file_cfg[key])
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r}: cannot convert {file_cfg[key]!r}") from None
        else:
            settings[dest] = None
    return settings


def audit_config(s: dict) -> AuditConfig:
    def pick(**kw):
        return {k: v for k, v in kw.items() if v is not None}

    return AuditConfig(
        label=LabelConfig(**pick(guard_s=s["guard_s"], t_min_s=s["t_min_s"])),
        features=FeatureConfig(**pick(window_s=s["window_s"], align_tol_s=s["align_tol_s"],
                                      min_tests_per_window=s["min_tests"])),
        detector=DetectorConfig(**pick(t_d_mbps=s["td_mbps"], t_r=s["tr"],
                                       plateau_s1_mbps=s["plateau_s1"], plateau_s3_mbps=s["plateau_s3"])),
        grace=GraceConfig(**pick(cap_mbps=s["cap_mbps"], onset_factor=s["onset_factor"],
                                 persistence_tests=s["persistence"])),
    )


def _require(s: dict, *keys: str) -> None:
    missing = [k for k in keys if not s.get(k)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k for k in missing))


def _emit(s: dict, name: str, text: str) -> None:
    if s.get("out"):
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")
        print(out / name)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

NOMINAL_PERIOD_S = {"telemetry": 1.0, "ping": 4.5, "speedtest": 120.0}
CADENCE_TOLERANCE = 0.2


def _stream_report(name: str, records: list) -> dict:
    recs = normalize_timeline(records)
    rep: dict[str, Any] = {"records": len(recs)}
    if not recs:
        return rep
    ts = [r.ts for r in recs]
    rep["span"] = [round(ts[0], 3), round(ts[-1], 3)]
    if len(ts) > 1:
        gaps = [b - a for a, b in zip(ts, ts[1:])]
        cadence = statistics.median(gaps)
        rep["cadence_s"] = round(cadence, 3)
        nominal = NOMINAL_PERIOD_S.get(name)
        if nominal:
            rep["nominal_s"] = nominal
            rep["cadence_ok"] = abs(cadence - nominal) <= CADENCE_TOLERANCE * nominal
        limit = max(60.0, 3 * (nominal or cadence))
        rep["gaps"] = [[round(a, 3), round(b, 3)] for a, b in zip(ts, ts[1:]) if b - a > limit]
    return rep


def cmd_validate(s: dict) -> int:
    if not any(s.get(k) for k in ("telemetry", "probes", "portal")):
        raise ConfigError("validate needs at least one of --telemetry, --probes, --portal")
    report: dict[str, Any] = {}
    rejects: dict[str, list] = {}
    for key, parse in (("telemetry", parse_telemetry), ("probes", parse_probes), ("portal", parse_portal)):
        path = s.get(key)
        if not path:
            continue
        with stage(f"validate:{key}"):
            res = parse(Path(path), format_of(path))
        rejects[key] = res.rejects
        entry: dict[str, Any] = {"path": str(path), "rejects": len(res.rejects)}
        if key == "probes":
            for kind, recs in (("ping", res.pings), ("speedtest", res.tests), ("iface", res.iface)):
                entry[kind] = _stream_report(kind, recs)
        else:
            entry.update(_stream_report(key, res.records))
        report[key] = entry

    for key, entry in report.items():
        streams = [(k, v) for k, v in entry.items() if isinstance(v, dict)] or [(key, entry)]
        print(f"{key}: {entry['path']} rejects={entry['rejects']}")
        for sname, rep in streams:
            line = f"  {sname}: records={rep['records']}"
            if "span" in rep:
                line += f" span=[{rep['span'][0]:.3f}, {rep['span'][1]:.3f}]"
            if "cadence_s" in rep:
                line += f" cadence={rep['cadence_s']}s"
                if rep.get("cadence_ok") is False:
                    line += f" (DEVIATES from nominal {rep['nominal_s']}s)"
            print(line)
            for a, b in rep.get("gaps", []):
                print(f"    gap {a:.3f} -> {b:.3f} ({b - a:.0f} s)")
    if s.get("out"):
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "validation.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        for key, rej in rejects.items():
            (out / f"rejects_{key}.jsonl").write_text(dumps_rejects(rej))
    return 0


def cmd_label(s: dict) -> int:
    _require(s, "portal")
    cfg = audit_config(s)
    inp = load_inputs(s.get("telemetry"), s.get("probes"), s["portal"])
    with stage("label"):
        start, end = inp.trace_bounds()
        segments = extract_segments(inp.portal, start, end, cfg.label)
    _emit(s, "segments.jsonl", dumps_segments(segments))
    return 0


def _windows(s: dict):
    _require(s, "telemetry", "probes")
    cfg = audit_config(s)
    inp = load_inputs(s["telemetry"], s["probes"])
    with stage("features"):
        start, _ = inp.trace_bounds()
        ratios, _ = align_ratios(inp.tests, inp.telemetry, cfg.features.align_tol_s)
        windows = window_features(inp.tests, ratios, inp.telemetry, cfg.features, start)
    return cfg, windows


def cmd_features(s: dict) -> int:
    _, windows = _windows(s)
    _emit(s, "features.csv", features_csv(windows)[0])
    return 0


def cmd_detect(s: dict) -> int:
    cfg, windows = _windows(s)
    with stage("detect"):
        classes = [c for _, c in classify_trace(windows, cfg.detector)]
    _emit(s, "detections.csv", detections_csv(windows, classes)[0])
    return 0


def cmd_calibrate(s: dict) -> int:
    _require(s, "telemetry", "probes", "portal")
    cfg = audit_config(s)
    result = run_audit(load_inputs(s["telemetry"], s["probes"], s["portal"]), cfg)
    with stage("calibrate"):
        try:
            cal = calibrate_thresholds(result.labeled_windows())
        except NoSeparationError as exc:
            print(json.dumps(exc.report, indent=1, sort_keys=True), file=sys.stderr)
            raise
    _emit(s, "calibration.json", calibration_json(cal))
    return 0


def cmd_grace(s: dict) -> int:
    _require(s, "portal", "probes")
    cfg = audit_config(s)
    inp = load_inputs(None, s["probes"], s["portal"])
    with stage("grace"):
        report = grace_window(inp.portal, inp.tests, cfg.grace)
    if report is None:
        log.warning("no quota-zero event or no sustained throttle onset found")
    _emit(s, "grace.json", grace_json(report))
    return 0


def _scenario(s: dict) -> Scenario:
    sc = Scenario.load(s["scenario"]) if s.get("scenario") else plan_hop_scenario()
    if s.get("seed") is not None:
        sc.seed = s["seed"]
    return sc


def cmd_simulate(s: dict) -> int:
    _require(s, "out")
    with stage("simulate"):
        out = simulate(_scenario(s))
        paths = out.write(s["out"], s.get("format") or "jsonl")
    for p in paths.values():
        print(p)
    return 0


def cmd_report(s: dict) -> int:
    _require(s, "out")
    cfg = audit_config(s)
    out_dir = Path(s["out"])
    extra: dict[str, int] = {}
    if s.get("scenario"):
        with stage("simulate"):
            sim_out = simulate(_scenario(s))
            paths = sim_out.write(out_dir, s.get("format") or "jsonl")
        names = {p.name: p for p in paths.values()}
        tel = next(p for n, p in names.items() if n.startswith("telemetry"))
        prb = next(p for n, p in names.items() if n.startswith("probes"))
        por = next(p for n, p in names.items() if n.startswith("portal"))
        extra = {tel.name: len(sim_out.telemetry), prb.name: len(sim_out.probe_records()),
                 por.name: len(sim_out.portal), "ground_truth.json": len(sim_out.truth.window_classes)}
    else:
        if not (s.get("telemetry") and s.get("probes")):
            raise ConfigError("report needs --telemetry and --probes (plus --portal for labels), or --scenario")
        tel, prb, por = s["telemetry"], s["probes"], s.get("portal")
    inp = load_inputs(tel, prb, por)
    result = run_audit(inp, cfg)
    with stage("report"):
        manifest = write_bundle(out_dir, inp, result, extra_files=extra)
    print(manifest)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


HANDLERS = {
    "validate": cmd_validate,
    "label": cmd_label,
    "features": cmd_features,
    "detect": cmd_detect,
    "calibrate": cmd_calibrate,
    "grace": cmd_grace,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        return HANDLERS[args.command](settings)
    except AuditError as exc:
        where = f" in stage {exc.stage}" if exc.stage else ""
        print(f"leoaudit {args.command}: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
