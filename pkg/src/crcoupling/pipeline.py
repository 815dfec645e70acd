"""End-to-end analysis of sessions and cohorts, producing report dictionaries and curve tables."""

from __future__ import annotations

import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bprsa import AnchorKind, BprsaConfig, BprsaResult, bprsa
from .errors import CRCError, InsufficientData, InvalidConfig
from .ingest import (CohortIndex, Session, SessionDescriptor, Stage, atomic_write_text,
                     load_session, parse_stage, write_manifest, write_waveform_csv)
from .phase import PhaseSeries, analytic_phase
from .signal import EventSeries, PeakConfig, Waveform, bandpass, detect_peaks, mean_rate, zscore
from .stats import (AgreementReport, CurveAlignment, PairedSample, agreement, align_curves,
                    estimate_hr, mean_std, pearson, significance_stars, wilcoxon_signed_rank)
from .synchro import (Episode, LongTermMetrics, RatioGrid, SyncCurve, SynchroConfig,
                      detect_episodes, long_term_metrics, sync_curve, synchrogram)
from .synth import SynthConfig, generate, render_rppg

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AnalysisConfig:
    """Every tunable of the pipeline; echoed verbatim into each report."""

    source: str = "bvp"
    filter_resp: bool = True
    resp_band_hz: tuple[float, float] = (0.05, 1.0)
    edge_frac: float = 0.02
    min_interval_s: float = 0.27
    prominence_frac: float = 0.3
    window_beats: int = 50
    half_window: int = 25
    gamma_threshold: float = 0.1
    min_episode_s: float = 5.0
    ratios: str = "default"
    bprsa_segment_s: float = 4.0
    bprsa_rate_hz: float = 50.0
    bprsa_normalize: bool = True
    hr_window_s: float = 30.0
    hr_band_bpm: tuple[float, float] = (40.0, 220.0)
    align_max_gap_s: float = 0.25
    min_overlap_s: float = 60.0
    synchrogram_m: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.source not in ("bvp", "rppg"):
            raise InvalidConfig(f"source must be 'bvp' or 'rppg', got {self.source!r}")
        object.__setattr__(self, "resp_band_hz", tuple(float(v) for v in self.resp_band_hz))
        object.__setattr__(self, "hr_band_bpm", tuple(float(v) for v in self.hr_band_bpm))
        object.__setattr__(self, "synchrogram_m", tuple(int(v) for v in self.synchrogram_m))
        # build once so bad values fail at construction
        self.peak_config(), self.synchro_config(), self.ratio_grid(), self.bprsa_config()

    def peak_config(self) -> PeakConfig:
        return PeakConfig(self.min_interval_s, self.prominence_frac)

    def synchro_config(self) -> SynchroConfig:
        return SynchroConfig(self.window_beats, self.half_window, self.gamma_threshold, self.min_episode_s)

    def ratio_grid(self) -> RatioGrid:
        return RatioGrid.parse(self.ratios)

    def bprsa_config(self) -> BprsaConfig:
        return BprsaConfig(self.bprsa_segment_s, self.bprsa_rate_hz)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["ratios_expanded"] = str(self.ratio_grid())
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "AnalysisConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names - {"ratios_expanded"}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items() if k in names}
        return cls(**kw)

    def replace(self, **changes) -> "AnalysisConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class CRCResult:
    """Synchrogram side of the analysis for one pulse source."""

    beats: EventSeries
    resp_phase: PhaseSeries
    curve: SyncCurve
    episodes: list[Episode]
    metrics: LongTermMetrics


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    crc: CRCResult
    bprsa_decline: BprsaResult
    bprsa_accelerate: BprsaResult
    config: AnalysisConfig
    session_info: dict = field(default_factory=dict)


def respiratory_phase(resp: Waveform, cfg: AnalysisConfig) -> PhaseSeries:
    if cfg.filter_resp:
        resp = bandpass(resp, *cfg.resp_band_hz)
    return analytic_phase(resp, cfg.edge_frac)


def crc_from_pulse(pulse: Waveform, resp_phase: PhaseSeries, cfg: AnalysisConfig) -> CRCResult:
    beats = detect_peaks(pulse, cfg.peak_config())
    return crc_from_beats(beats, resp_phase, cfg)


def crc_from_beats(beats: EventSeries, resp_phase: PhaseSeries, cfg: AnalysisConfig) -> CRCResult:
    scfg = cfg.synchro_config()
    curve = sync_curve(beats, resp_phase, cfg.ratio_grid(), scfg)
    episodes = detect_episodes(curve, scfg)
    metrics = long_term_metrics(curve, episodes, beats, resp_phase)
    return CRCResult(beats, resp_phase, curve, episodes, metrics)


def bprsa_pair(pulse: Waveform, resp: Waveform, cfg: AnalysisConfig) -> tuple[BprsaResult, BprsaResult]:
    if cfg.bprsa_normalize:
        pulse, resp = zscore(pulse), zscore(resp)
    bcfg = cfg.bprsa_config()
    return (bprsa(pulse, resp, AnchorKind.DECLINE, bcfg),
            bprsa(pulse, resp, AnchorKind.ACCELERATE, bcfg))


def _session_info(session: Session, desc: SessionDescriptor | None) -> dict:
    info = {"subject": session.subject_id, "stage": session.stage.value, "repetition": session.repetition}
    if desc is not None:
        info.update({k: v for k, v in desc.as_dict().items() if k.endswith("_path") or k == "stage_code"})
    return info


def _with_provenance(exc: CRCError, where: str) -> CRCError:
    if where and not str(exc).startswith(where):
        exc.args = (f"{where}: {exc}",) + exc.args[1:]
    return exc


def analyze_session(session: Session, cfg: AnalysisConfig | None = None,
                    desc: SessionDescriptor | None = None) -> AnalysisResult:
    """Synchrogram metrics and both BPRSA averages for one session."""
    cfg = cfg or AnalysisConfig()
    where = f"session {desc.name if desc else session.subject_id}"
    try:
        pulse = session.pulse(cfg.source)
        phase = respiratory_phase(session.resp, cfg)
        crc = crc_from_pulse(pulse, phase, cfg)
        dec, acc = bprsa_pair(pulse, session.resp, cfg)
    except CRCError as exc:
        raise _with_provenance(exc, where)
    return AnalysisResult(crc, dec, acc, cfg, _session_info(session, desc))


def _f(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def _bprsa_dict(r: BprsaResult) -> dict:
    return {"anchor_count": r.anchor_count, "mra": _f(r.mra), "sap": _f(r.sap)}


def _episode_dict(e: Episode) -> dict:
    return {"start_s": e.start_s, "end_s": e.end_s, "duration_s": e.duration_s,
            "dominant_ratio": f"{e.dominant_n}:{e.dominant_m}", "n_beats": e.n_beats,
            "mean_degree": _f(e.mean_degree)}


def _crc_dict(crc: CRCResult) -> dict:
    d = crc.curve.degree
    return {
        "beats": {"count": len(crc.beats), "mean_rate_hz": mean_rate(crc.beats)},
        "long_term": dataclasses.asdict(crc.metrics),
        "degree_summary": {"points": int(d.size), "mean": float(d.mean()), "median": float(np.median(d)),
                           "start_s": float(crc.curve.beat_times_s[0]),
                           "end_s": float(crc.curve.beat_times_s[-1])},
        "episodes": [_episode_dict(e) for e in crc.episodes],
    }


def analysis_report(result: AnalysisResult) -> dict:
    out = {
        "schema": "crcoupling.analysis",
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "session": result.session_info,
        "config": result.config.to_dict(),
    }
    out.update(_crc_dict(result.crc))
    out["bprsa"] = {"decline": _bprsa_dict(result.bprsa_decline),
                    "accelerate": _bprsa_dict(result.bprsa_accelerate),
                    "normalized_inputs": result.config.bprsa_normalize}
    return out


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv(header: list[str], columns: list) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in zip(*columns):
        buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue()


def curve_tables(result: AnalysisResult) -> dict[str, str]:
    """Plot-ready CSV text keyed by file name."""
    crc = result.crc
    tables = {}
    cols, header = [], ["t_s"]
    t = None
    for m in result.config.synchrogram_m:
        t, psi = synchrogram(crc.beats, crc.resp_phase, m)
        cols.append(psi.tolist())
        header.append(f"psi_{m}")
    tables["synchrogram.csv"] = _csv(header, [t.tolist()] + cols)
    c = crc.curve
    tables["degree.csv"] = _csv(["t_s", "degree", "best_n", "best_m"],
                                [c.beat_times_s.tolist(), c.degree.tolist(), c.best_n.tolist(), c.best_m.tolist()])
    tables["bprsa.csv"] = _csv(["lag_s", "decline", "accelerate"],
                               [result.bprsa_decline.lags_s.tolist(),
                                result.bprsa_decline.avg_segment.tolist(),
                                result.bprsa_accelerate.avg_segment.tolist()])
    return tables


def write_outputs(out_dir, report: dict, tables: dict[str, str], report_name: str = "report.json") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / report_name, dumps_report(report))
    for name, text in tables.items():
        atomic_write_text(out / name, text)
    return out / report_name


# -- source comparison ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ComparisonResult:
    bvp: CRCResult
    rppg: CRCResult
    alignment: CurveAlignment
    curve_r: float | None
    hr_bvp: np.ndarray
    hr_rppg: np.ndarray
    hr_agreement: AgreementReport
    config: AnalysisConfig
    session_info: dict = field(default_factory=dict)


def compare_session(session: Session, cfg: AnalysisConfig | None = None,
                    desc: SessionDescriptor | None = None) -> ComparisonResult:
    """Run the synchrogram pipeline on both pulse sources and measure their agreement."""
    cfg = cfg or AnalysisConfig()
    where = f"session {desc.name if desc else session.subject_id}"
    try:
        bvp_w, rppg_w = session.pulse("bvp"), session.pulse("rppg")
        phase = respiratory_phase(session.resp, cfg)
        a = crc_from_pulse(bvp_w, phase, cfg)
        b = crc_from_pulse(rppg_w, phase, cfg)
        al = align_curves(a.curve, b.curve, cfg.align_max_gap_s)
        try:
            r = pearson(al.degree_a, al.degree_b)
        except CRCError:
            r = None
        hb = estimate_hr(bvp_w, cfg.hr_window_s, cfg.hr_band_bpm)
        hr = estimate_hr(rppg_w, cfg.hr_window_s, cfg.hr_band_bpm)
        k = min(hb.size, hr.size)
        ag = agreement(hr[:k], hb[:k]) if k >= 2 else None
    except CRCError as exc:
        raise _with_provenance(exc, where)
    if ag is None:
        raise _with_provenance(InsufficientData("need at least 2 heart-rate windows per source"), where)
    return ComparisonResult(a, b, al, r, hb[:k], hr[:k], ag, cfg, _session_info(session, desc))


def comparison_report(res: ComparisonResult) -> dict:
    return {
        "schema": "crcoupling.comparison",
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "session": res.session_info,
        "config": res.config.to_dict(),
        "bvp": _crc_dict(res.bvp),
        "rppg": _crc_dict(res.rppg),
        "curve_alignment": {"pairs": res.alignment.pairs, "dropped_bvp": res.alignment.dropped_a,
                            "dropped_rppg": res.alignment.dropped_b,
                            "max_gap_s": res.config.align_max_gap_s},
        "curve_pearson_r": res.curve_r,
        "hr": {"windows": int(res.hr_bvp.size), "window_s": res.config.hr_window_s,
               "bvp_bpm": res.hr_bvp.tolist(), "rppg_bpm": res.hr_rppg.tolist(),
               "mae": res.hr_agreement.mae, "mape": res.hr_agreement.mape,
               "rmse": res.hr_agreement.rmse, "pearson_r": res.hr_agreement.pearson_r},
    }


def comparison_tables(res: ComparisonResult) -> dict[str, str]:
    al = res.alignment
    return {"degree_pairs.csv": _csv(["t_bvp_s", "t_rppg_s", "degree_bvp", "degree_rppg"],
                                     [al.times_a.tolist(), al.times_b.tolist(),
                                      al.degree_a.tolist(), al.degree_b.tolist()])}


# -- cohort statistics ---------------------------------------------------------

METRIC_COLUMNS = {
    "Min": ("min_pct",),
    "Max": ("max_pct",),
    "NumSync": ("num_sync",),
    "FreqRatio": ("freq_ratio",),
    "MRA": ("mra_decline", "mra_accelerate"),
    "SAP": ("sap_decline", "sap_accelerate"),
}


def session_metrics(result: AnalysisResult) -> dict[str, float]:
    m = result.crc.metrics
    return {
        "min_pct": m.min_pct, "max_pct": m.max_pct, "num_sync": float(m.num_sync),
        "freq_ratio": m.freq_ratio,
        "mra_decline": result.bprsa_decline.mra, "sap_decline": result.bprsa_decline.sap,
        "mra_accelerate": result.bprsa_accelerate.mra, "sap_accelerate": result.bprsa_accelerate.sap,
    }


def _analyze_descriptor(args) -> dict[str, float]:
    desc, cfg = args
    session = load_session(desc, cfg.min_overlap_s)
    return session_metrics(analyze_session(session, cfg, desc))


def cohort_stats(index: CohortIndex, cfg: AnalysisConfig | None = None,
                 metrics: list[str] | None = None, jobs: int = 1,
                 alternative: str = "two-sided") -> dict:
    """Per-subject state means and a paired Wilcoxon test per metric column.

    Sessions of the same subject and state are averaged first; only
    subjects with both states enter the paired test (stationary minus
    recovery).
    """
    cfg = cfg or AnalysisConfig()
    metrics = metrics or list(METRIC_COLUMNS)
    bad = [m for m in metrics if m not in METRIC_COLUMNS]
    if bad:
        raise InvalidConfig(f"unknown metric(s) {', '.join(bad)}; choose from {', '.join(METRIC_COLUMNS)}")
    columns = [c for m in metrics for c in METRIC_COLUMNS[m]]
    work = [(d, cfg) for d in index.sessions]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_analyze_descriptor, work))
    else:
        rows = [_analyze_descriptor(w) for w in work]

    per: dict[tuple[str, Stage], list[dict]] = {}
    for d, row in zip(index.sessions, rows):
        per.setdefault((d.subject_id, d.stage), []).append(row)
    subjects = sorted({s for s, _ in per})
    paired = [s for s in subjects if (s, Stage.STATIONARY) in per and (s, Stage.EXERCISE_RECOVERY) in per]
    if len(paired) < 5:
        raise InsufficientData(f"{len(paired)} subject(s) have both states; need at least 5")

    def subject_mean(s, stage, col):
        return float(np.mean([r[col] for r in per[(s, stage)]]))

    table = {}
    for col in columns:
        a = [subject_mean(s, Stage.STATIONARY, col) for s in paired]
        b = [subject_mean(s, Stage.EXERCISE_RECOVERY, col) for s in paired]
        ma, sa = mean_std(a)
        mb, sb = mean_std(b)
        entry = {"stationary": {"mean": ma, "std": sa, "values": a},
                 "recovery": {"mean": mb, "std": sb, "values": b}}
        try:
            w = wilcoxon_signed_rank(PairedSample(tuple(paired), np.array(a), np.array(b)), alternative)
            entry["wilcoxon"] = {"statistic": w.statistic, "p": w.pvalue, "stars": significance_stars(w.pvalue)}
        except InsufficientData as exc:
            entry["wilcoxon"] = {"statistic": None, "p": None, "stars": "", "note": str(exc)}
        table[col] = entry
    return {
        "schema": "crcoupling.cohort",
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "root": str(index.root),
        "sessions": len(index.sessions),
        "subjects": paired,
        "alternative": alternative,
        "config": cfg.to_dict(),
        "metrics": table,
    }


def format_cohort_table(report: dict) -> str:
    lines = [f"{'metric':<16}{'Stationary':>22}{'Exercise Recovery':>22}{'p':>12}"]
    for col, e in report["metrics"].items():
        a, b, w = e["stationary"], e["recovery"], e["wilcoxon"]
        p = "n/a" if w["p"] is None else f"{w['p']:.4g}{w['stars']}"
        lines.append(f"{col:<16}{a['mean']:>12.4g} ± {a['std']:<7.3g}{b['mean']:>12.4g} ± {b['std']:<7.3g}{p:>12}")
    return "\n".join(lines) + "\n"


# -- synthetic sessions --------------------------------------------------------

def write_synth_session(out_dir, cfg: SynthConfig, subject: str = "synth", stage: Stage | str = "1",
                        repetition: int = 1, rppg_jitter_s: float | None = None,
                        rppg_seed: int | None = None) -> SessionDescriptor:
    """Generate one synthetic session and write its waveform CSVs; returns the descriptor."""
    out = Path(out_dir)
    stage_code = stage.value if isinstance(stage, Stage) else str(stage)
    st = parse_stage(stage_code)
    resp, pulse, truth = generate(cfg)
    base = f"{subject}_s{stage_code}_r{repetition}"
    resp_p, bvp_p = out / f"{base}_resp.csv", out / f"{base}_bvp.csv"
    write_waveform_csv(resp_p, resp)
    write_waveform_csv(bvp_p, pulse)
    rppg_p = None
    if rppg_jitter_s is not None:
        rppg = render_rppg(truth, cfg, rppg_jitter_s, cfg.seed + 1 if rppg_seed is None else rppg_seed)
        rppg_p = out / f"{base}_rppg.csv"
        write_waveform_csv(rppg_p, rppg)
    return SessionDescriptor(subject, st, repetition, resp_p, bvp_p, rppg_p, stage_code)


REST_PRESET = dict(heart_hz=1.1, resp_hz=0.26, couple_n=4, epsilon=0.1, rsa_gain=0.05, phase_noise=0.01)
# coupling switches on and off on a minute scale, so locking comes and goes
RECOVERY_PRESET = dict(heart_hz=1.6, resp_hz=0.30, couple_n=5, epsilon=1.5, epsilon_mod_depth=3.0,
                       epsilon_mod_hz=1 / 60, rsa_gain=0.4, phase_noise=0.01)


def write_synth_cohort(out_dir, subjects: int = 8, seed: int = 0, duration_s: float = 180.0,
                       rest: dict | None = None, recovery: dict | None = None,
                       rppg_jitter_s: float | None = None) -> Path:
    """Paired rest/recovery synthetic sessions for ``subjects`` subjects plus a manifest."""
    rest = {**REST_PRESET, **(rest or {})}
    recovery = {**RECOVERY_PRESET, **(recovery or {})}
    rng = np.random.default_rng(seed)
    descs = []
    for i in range(subjects):
        sid = f"S{i + 1:02d}"
        s1, s2 = (int(v) for v in rng.integers(0, 2**31 - 1, size=2))
        descs.append(write_synth_session(out_dir, SynthConfig(duration_s=duration_s, seed=s1, **rest),
                                         sid, "1", 1, rppg_jitter_s))
        descs.append(write_synth_session(out_dir, SynthConfig(duration_s=duration_s, seed=s2, **recovery),
                                         sid, "2", 1, rppg_jitter_s))
    manifest = Path(out_dir) / "manifest.csv"
    write_manifest(manifest, descs)
    return manifest
