"""Command-line interface: ``crcoupling <command> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 insufficient
data, 4 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import CRCError, EmptyResult, InsufficientData, InvalidConfig, InvalidInput
from .ingest import (SessionDescriptor, atomic_write_text, load_session, parse_stage, scan_cohort,
                     write_manifest)
from .pipeline import (METRIC_COLUMNS, AnalysisConfig, _bprsa_dict, _csv, _session_info, analysis_report,
                       analyze_session, bprsa_pair, cohort_stats, compare_session, comparison_report,
                       comparison_tables, curve_tables, dumps_report, format_cohort_table, write_outputs,
                       write_synth_cohort, write_synth_session)
from .synth import SynthConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4
ROOT_ENV = "CRC_COHORT_ROOT"

log = logging.getLogger("crcoupling")

_HELP = {
    "source": "pulse source used for beat detection",
    "filter_resp": "band-pass the respiration signal before the Hilbert transform",
    "resp_band_hz": "respiration pass band (low high, Hz)",
    "edge_frac": "fraction of the phase series trimmed at each end as edge-unreliable",
    "min_interval_s": "minimum spacing between detected beats (s)",
    "prominence_frac": "peak prominence as a fraction of the 5-95 percentile range",
    "window_beats": "beats per synchronization window",
    "half_window": "beats on each side of the reference beat",
    "gamma_threshold": "synchronization threshold on the degree",
    "min_episode_s": "minimum episode duration (s)",
    "ratios": "n:m ratio grid, 'default' or a list like '3:1,4:1,7:2'",
    "bprsa_segment_s": "BPRSA segment length (s), centred on the anchor",
    "bprsa_rate_hz": "rate the BPRSA target is resampled to (Hz)",
    "bprsa_normalize": "z-score pulse and respiration before BPRSA",
    "hr_window_s": "heart-rate estimation window (s)",
    "hr_band_bpm": "heart-rate search band (low high, bpm)",
    "align_max_gap_s": "largest beat-time gap when pairing two curves (s)",
    "min_overlap_s": "minimum common duration of a session's waveforms (s)",
    "synchrogram_m": "respiratory cycle counts m written to synchrogram.csv",
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("analysis parameters (override --config)")
    g.add_argument("--config", type=Path, help="JSON file with analysis parameters")
    for f in dataclasses.fields(AnalysisConfig):
        kw = dict(dest=f"cfg_{f.name}", default=None, help=_HELP.get(f.name))
        default = f.default
        if isinstance(default, bool):
            kw["action"] = argparse.BooleanOptionalAction
        elif isinstance(default, tuple):
            kw["type"] = type(default[0])
            kw["nargs"] = 2 if len(default) == 2 and f.name != "synchrogram_m" else "+"
        else:
            kw["type"] = type(default)
        if not isinstance(default, bool):
            kw["metavar"] = f.name.upper()
        if f.name == "source":
            kw["choices"] = ("bvp", "rppg")
        g.add_argument(_flag(f.name), **kw)


def build_config(args: argparse.Namespace) -> AnalysisConfig:
    """Config file values first, then any flag given on the command line."""
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidInput(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InvalidConfig(f"{args.config}: expected a JSON object")
        data = {k: v for k, v in data.items() if k != "ratios_expanded"}
    for f in dataclasses.fields(AnalysisConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            data[f.name] = tuple(v) if isinstance(v, list) else v
    try:
        return AnalysisConfig.from_dict(data)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def _add_session_args(p: argparse.ArgumentParser, need_rppg: bool = False) -> None:
    g = p.add_argument_group("session selection")
    g.add_argument("--root", type=Path, help=f"cohort root (default: ${ROOT_ENV} or the manifest's folder)")
    g.add_argument("--manifest", type=Path, help="cohort manifest CSV; select a session with --subject/--stage")
    g.add_argument("--subject", help="subject id")
    g.add_argument("--stage", help="stage code or name (1-4, stationary, recovery)")
    g.add_argument("--repetition", type=int, help="repetition number")
    g.add_argument("--resp", type=Path, help="respiration CSV (instead of a manifest)")
    g.add_argument("--bvp", type=Path, help="contact pulse CSV")
    g.add_argument("--rppg", type=Path, help="camera pulse CSV" + (" (required)" if need_rppg else ""))


def _cohort_root(args) -> Path | None:
    if args.root is not None:
        return args.root
    env = os.environ.get(ROOT_ENV)
    return Path(env) if env else None


def _load_index(args):
    root = _cohort_root(args)
    manifest = args.manifest
    if manifest is None:
        if root is None:
            raise InvalidInput(f"give --manifest, --root or set ${ROOT_ENV}")
        manifest = root / "manifest.csv"
    if root is None:
        root = Path(manifest).parent
    return scan_cohort(root, manifest)


def _select_session(args) -> SessionDescriptor:
    if args.resp is not None:
        if args.manifest is not None:
            raise InvalidInput("use either --manifest or direct --resp/--bvp/--rppg files, not both")
        if args.bvp is None and args.rppg is None:
            raise InvalidInput("--resp needs --bvp and/or --rppg")
        stage = args.stage or "1"
        return SessionDescriptor(args.subject or "session", parse_stage(stage), args.repetition or 1,
                                 args.resp, args.bvp, args.rppg, stage)
    index = _load_index(args)
    stage = parse_stage(args.stage) if args.stage else None
    found = index.find(args.subject, stage, args.repetition)
    if not found:
        raise InvalidInput("no session in the manifest matches the selection")
    if len(found) > 1:
        names = ", ".join(d.name for d in found[:5])
        raise InvalidInput(f"{len(found)} sessions match ({names}...); narrow with --subject/--stage/--repetition")
    return found[0]


# -- commands ------------------------------------------------------------------

def cmd_analyze(args) -> int:
    cfg = build_config(args)
    desc = _select_session(args)
    session = load_session(desc, cfg.min_overlap_s)
    result = analyze_session(session, cfg, desc)
    report = analysis_report(result)
    path = write_outputs(Path(args.out), report, curve_tables(result))
    m = result.crc.metrics
    print(f"{desc.name}: beats={len(result.crc.beats)} min={m.min_pct:.2f}% max={m.max_pct:.2f}% "
          f"num_sync={m.num_sync} freq_ratio={m.freq_ratio:.3f} -> {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = build_config(args)
    desc = _select_session(args)
    session = load_session(desc, cfg.min_overlap_s)
    res = compare_session(session, cfg, desc)
    path = write_outputs(Path(args.out), comparison_report(res), comparison_tables(res), "comparison.json")
    r = "undefined" if res.curve_r is None else f"{res.curve_r:.4f}"
    ag = res.hr_agreement
    print(f"{desc.name}: curve r={r} pairs={res.alignment.pairs} HR MAE={ag.mae:.3f} "
          f"MAPE={ag.mape:.3f}% RMSE={ag.rmse:.3f} -> {path}")
    return EXIT_OK


def cmd_bprsa(args) -> int:
    cfg = build_config(args)
    desc = _select_session(args)
    session = load_session(desc, cfg.min_overlap_s)
    try:
        dec, acc = bprsa_pair(session.pulse(cfg.source), session.resp, cfg)
    except CRCError as exc:
        exc.args = (f"session {desc.name}: {exc}",) + exc.args[1:]
        raise
    report = {
        "schema": "crcoupling.bprsa",
        "schema_version": 1,
        "tool_version": __version__,
        "session": _session_info(session, desc),
        "config": cfg.to_dict(),
        "decline": _bprsa_dict(dec),
        "accelerate": _bprsa_dict(acc),
    }
    table = _csv(["lag_s", "decline", "accelerate"],
                 [dec.lags_s.tolist(), dec.avg_segment.tolist(), acc.avg_segment.tolist()])
    path = write_outputs(Path(args.out), report, {"bprsa.csv": table}, "bprsa.json")
    print(f"{desc.name}: decline MRA={dec.mra:.4f} SAP={dec.sap:.4f}; "
          f"accelerate MRA={acc.mra:.4f} SAP={acc.sap:.4f} -> {path}")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = build_config(args)
    index = _load_index(args)
    metrics = [m.strip() for m in args.metrics.split(",")] if args.metrics else None
    log.info("analysing %d sessions from %s", len(index), index.root)
    report = cohort_stats(index, cfg, metrics, jobs=args.jobs, alternative=args.alternative)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "cohort.json", dumps_report(report))
    sys.stdout.write(format_cohort_table(report))
    return EXIT_OK


def _synth_config(args) -> SynthConfig:
    return SynthConfig(
        duration_s=args.duration, resp_hz=args.resp_hz, heart_hz=args.heart_hz,
        couple_n=args.couple_n, couple_m=args.couple_m, epsilon=args.epsilon,
        rsa_gain=args.rsa_gain, phase_noise=args.phase_noise, seed=args.seed,
        pulse_rate_hz=args.pulse_rate, resp_rate_hz=args.resp_rate,
        baseline_gain=args.baseline_gain, epsilon_mod_depth=args.epsilon_mod_depth,
        epsilon_mod_hz=args.epsilon_mod_hz,
    )


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jitter = None if args.rppg_jitter_ms is None else args.rppg_jitter_ms / 1000.0
    if args.cohort:
        manifest = write_synth_cohort(out, subjects=args.cohort, seed=args.seed,
                                      duration_s=args.duration, rppg_jitter_s=jitter)
        print(f"wrote {2 * args.cohort} sessions -> {manifest}")
        return EXIT_OK
    cfg = _synth_config(args)
    desc = write_synth_session(out, cfg, args.subject, args.stage, 1, jitter)
    write_manifest(out / "manifest.csv", [desc])
    print(f"wrote session {desc.name} -> {out / 'manifest.csv'}")
    return EXIT_OK


def _format_report(doc: dict) -> str:
    kind = doc.get("schema")
    lines = [f"{kind} v{doc.get('schema_version')} (tool {doc.get('tool_version')})"]
    if kind == "crcoupling.analysis":
        s, lt = doc["session"], doc["long_term"]
        lines.append(f"session   {s.get('subject')} / {s.get('stage')} / rep {s.get('repetition')}")
        lines.append(f"beats     {doc['beats']['count']} at {doc['beats']['mean_rate_hz']:.3f} Hz")
        lines.append(f"degree    min {lt['min_pct']:.2f}%  max {lt['max_pct']:.2f}%  "
                     f"median {100 * doc['degree_summary']['median']:.2f}%")
        lines.append(f"episodes  {lt['num_sync']}  freq ratio {lt['freq_ratio']:.3f}")
        for e in doc["episodes"]:
            lines.append(f"  {e['start_s']:8.2f}-{e['end_s']:8.2f} s  {e['dominant_ratio']:>5}  "
                         f"{e['duration_s']:.1f} s")
        for k in ("decline", "accelerate"):
            b = doc["bprsa"][k]
            lines.append(f"bprsa {k:<10} anchors {b['anchor_count']}  MRA {b['mra']:.4f}  SAP {b['sap']:.4f}")
    elif kind == "crcoupling.comparison":
        hr = doc["hr"]
        lines.append(f"curve r   {doc['curve_pearson_r']}  ({doc['curve_alignment']['pairs']} pairs)")
        lines.append(f"HR        MAE {hr['mae']:.3f}  MAPE {hr['mape']:.3f}%  RMSE {hr['rmse']:.3f}  "
                     f"r {hr['pearson_r']}")
    elif kind == "crcoupling.cohort":
        lines.append(format_cohort_table(doc).rstrip("\n"))
    elif kind == "crcoupling.bprsa":
        for k in ("decline", "accelerate"):
            b = doc[k]
            lines.append(f"{k:<10} anchors {b['anchor_count']}  MRA {b['mra']:.4f}  SAP {b['sap']:.4f}")
    else:
        raise InvalidInput(f"unknown report schema {kind!r}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidInput(f"report not found: {args.path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{args.path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or "schema" not in doc:
        raise InvalidInput(f"{args.path}: not a crcoupling report")
    if isinstance(doc.get("config"), dict):
        AnalysisConfig.from_dict(doc["config"])  # rejects reports from an incompatible config schema
    sys.stdout.write(_format_report(doc))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crcoupling", description="Cardiorespiratory coupling analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="synchrogram metrics, episodes and BPRSA for one session")
    _add_session_args(a)
    _add_config_args(a)
    a.add_argument("--out", required=True, help="output folder (report.json plus curve CSVs)")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="agreement between contact and camera pulse for one session")
    _add_session_args(c, need_rppg=True)
    _add_config_args(c)
    c.add_argument("--out", required=True, help="output folder (comparison.json, degree_pairs.csv)")
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bprsa", help="BPRSA averages and features for one session")
    _add_session_args(b)
    _add_config_args(b)
    b.add_argument("--out", required=True, help="output folder (bprsa.json, bprsa.csv)")
    b.set_defaults(func=cmd_bprsa)

    s = sub.add_parser("stats", help="paired state comparison across a cohort")
    s.add_argument("--root", type=Path, help=f"cohort root (default: ${ROOT_ENV})")
    s.add_argument("--manifest", type=Path, help="manifest CSV (default: <root>/manifest.csv)")
    s.add_argument("--metrics", help=f"comma list from {','.join(METRIC_COLUMNS)} (default: all)")
    s.add_argument("--alternative", default="two-sided", choices=("two-sided", "greater", "less"),
                   help="Wilcoxon alternative for stationary minus recovery")
    s.add_argument("--jobs", type=int, default=1, help="sessions analysed in parallel")
    s.add_argument("--out", help="folder for cohort.json")
    _add_config_args(s)
    s.set_defaults(func=cmd_stats)

    y = sub.add_parser("synth", help="write a synthetic session (or cohort) with a manifest")
    d = SynthConfig()
    y.add_argument("--out", required=True, help="output folder")
    y.add_argument("--duration", type=float, default=d.duration_s, help="seconds")
    y.add_argument("--resp-hz", type=float, default=d.resp_hz)
    y.add_argument("--heart-hz", type=float, default=d.heart_hz)
    y.add_argument("--couple-n", type=int, default=d.couple_n)
    y.add_argument("--couple-m", type=int, default=d.couple_m)
    y.add_argument("--epsilon", type=float, default=d.epsilon, help="coupling strength (rad/s)")
    y.add_argument("--epsilon-mod-depth", type=float, default=d.epsilon_mod_depth)
    y.add_argument("--epsilon-mod-hz", type=float, default=d.epsilon_mod_hz)
    y.add_argument("--rsa-gain", type=float, default=d.rsa_gain)
    y.add_argument("--baseline-gain", type=float, default=None, help="default: follows --rsa-gain")
    y.add_argument("--phase-noise", type=float, default=d.phase_noise, help="rad per integration step")
    y.add_argument("--pulse-rate", type=float, default=d.pulse_rate_hz)
    y.add_argument("--resp-rate", type=float, default=d.resp_rate_hz)
    y.add_argument("--seed", type=int, default=d.seed)
    y.add_argument("--subject", default="synth")
    y.add_argument("--stage", default="1")
    y.add_argument("--rppg-jitter-ms", type=float, default=None,
                   help="also write a camera-pulse file with beat times jittered by this sigma")
    y.add_argument("--cohort", type=int, default=0,
                   help="write N subjects with paired rest/recovery sessions instead")
    y.set_defaults(func=cmd_synth)

    r = sub.add_parser("report", help="print a human-readable summary of a JSON report")
    r.add_argument("path", type=Path)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InsufficientData, EmptyResult) as exc:
        print(f"crcoupling: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CRCError as exc:
        print(f"crcoupling: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"crcoupling: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
