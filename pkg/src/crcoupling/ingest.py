"""Waveform CSV files, cohort manifests and the session model.

Waveform CSV: UTF-8, a header line, then either ``t_seconds,value`` rows or
bare ``value`` rows. A value-only file takes its rate from the caller or from
a JSON sidecar with the same stem (``{"rate_hz": 50, "start_s": 0}``).

Manifest: CSV with header ``subject,stage,repetition,resp_path,bvp_path,rppg_path``;
``bvp_path``/``rppg_path`` may be empty, paths are relative to the cohort
root, lines starting with ``#`` are comments. Stages 1 and 3 are stationary,
2 and 4 exercise recovery; the names ``stationary``/``recovery`` are also
accepted.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (InsufficientData, InvalidInput, ManifestError, MissingFile,
                     NonUniform, ParseError, RateMismatch)
from .signal import Label, Waveform

MANIFEST_FIELDS = ("subject", "stage", "repetition", "resp_path", "bvp_path", "rppg_path")
MIN_OVERLAP_S = 60.0
MAX_JITTER = 0.10


class Stage(str, Enum):
    STATIONARY = "Stationary"
    EXERCISE_RECOVERY = "ExerciseRecovery"


_STAGE_CODES = {
    "1": Stage.STATIONARY, "3": Stage.STATIONARY,
    "2": Stage.EXERCISE_RECOVERY, "4": Stage.EXERCISE_RECOVERY,
    "stationary": Stage.STATIONARY, "rest": Stage.STATIONARY,
    "recovery": Stage.EXERCISE_RECOVERY, "exerciserecovery": Stage.EXERCISE_RECOVERY,
    "exercise_recovery": Stage.EXERCISE_RECOVERY,
}


def parse_stage(text: str) -> Stage:
    try:
        return _STAGE_CODES[text.strip().lower()]
    except KeyError:
        raise ManifestError(f"unknown stage {text!r}; use 1-4, 'stationary' or 'recovery'") from None


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise MissingFile(f"file not found: {path}")
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return fh.read().splitlines()


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _header_columns(path: Path, header: str) -> int:
    cols = [c.strip() for c in header.split(",")]
    if not header.strip() or len(cols) > 2 or any(not c for c in cols):
        raise ParseError(path, 1, f"expected header 't_seconds,value' or 'value', got {header!r}")
    if any(_is_number(c) for c in cols):
        raise ParseError(path, 1, "missing header line")
    return len(cols)


def check_waveform_header(path) -> int:
    """Validate just the header of a waveform CSV; returns its column count."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"file not found: {path}")
    with open(path, encoding="utf-8-sig", newline="") as fh:
        first = fh.readline().rstrip("\r\n")
    return _header_columns(path, first)


def _snap_rate(rate: float) -> float:
    nice = round(rate, 6)
    return nice if abs(nice - rate) <= 1e-9 * rate else rate


def _read_sidecar(path: Path) -> tuple[float, float] | None:
    side = path.with_suffix(".json")
    if not side.is_file():
        return None
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
        return float(meta["rate_hz"]), float(meta.get("start_s", 0.0))
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(side, 1, f"bad sidecar: {exc}") from None


def load_waveform_csv(path, label: Label | str, expected_rate_hz: float | None = None,
                      rate_hz: float | None = None) -> Waveform:
    """Read a waveform CSV, validating sampling regularity and sample values.

    Two-column files must be uniformly spaced: every interval within 10 % of
    the median interval. Their rate is ``(n - 1) / (t_last - t_first)`` and
    samples are placed on the exact uniform grid from ``t_first``.
    """
    path = Path(path)
    label = Label(label)
    lines = _read_lines(path)
    if not lines:
        raise ParseError(path, 1, "empty file")
    ncols = _header_columns(path, lines[0])
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            raise ParseError(path, lineno, f"expected {ncols} column(s), got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError(path, lineno, f"not a number: {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(path, lineno, "NaN/Inf values are not accepted")
        rows.append((lineno, vals))
    if len(rows) < 2:
        raise ParseError(path, len(lines), "need at least 2 samples")
    data = np.array([v for _, v in rows])

    if ncols == 2:
        t = data[:, 0]
        dt = np.diff(t)
        if np.any(dt <= 0):
            bad = int(np.flatnonzero(dt <= 0)[0]) + 1
            raise ParseError(path, rows[bad][0], "time stamps must increase strictly")
        nominal = float(np.median(dt))
        off = np.abs(dt - nominal) > MAX_JITTER * nominal
        if np.any(off):
            bad = int(np.flatnonzero(off)[0]) + 1
            raise NonUniform(
                f"{path}:{rows[bad][0]}: interval {dt[bad - 1]:.6g} s deviates more than "
                f"{MAX_JITTER:.0%} from the nominal {nominal:.6g} s"
            )
        rate = _snap_rate((t.size - 1) / (t[-1] - t[0]))
        start = float(t[0])
        samples = data[:, 1]
    else:
        if rate_hz is None:
            side = _read_sidecar(path)
            if side is None and expected_rate_hz is None:
                raise InvalidInput(f"{path}: value-only file needs a rate (argument or {path.with_suffix('.json').name})")
            rate, start = side if side is not None else (expected_rate_hz, 0.0)
        else:
            rate, start = float(rate_hz), 0.0
        samples = data[:, 0]

    if expected_rate_hz is not None and abs(rate - expected_rate_hz) > 0.01 * expected_rate_hz:
        raise RateMismatch(f"{path}: measured rate {rate:.6g} Hz, expected {expected_rate_hz:g} Hz")
    return Waveform(samples, rate, start, label)


def write_waveform_csv(path, w: Waveform) -> None:
    buf = io.StringIO()
    buf.write("t_seconds,value\n")
    for t, v in zip(w.times.tolist(), w.samples.tolist()):
        buf.write(f"{t!r},{v!r}\n")
    atomic_write_text(path, buf.getvalue())


@dataclass(frozen=True)
class SessionDescriptor:
    subject_id: str
    stage: Stage
    repetition: int
    resp_path: Path
    bvp_path: Path | None = None
    rppg_path: Path | None = None
    stage_code: str = ""

    @property
    def key(self) -> tuple[str, Stage, int]:
        return (self.subject_id, self.stage, self.repetition)

    @property
    def name(self) -> str:
        return f"{self.subject_id}_{self.stage.value}_{self.repetition}"

    def as_dict(self) -> dict:
        return {
            "subject": self.subject_id,
            "stage": self.stage.value,
            "stage_code": self.stage_code,
            "repetition": self.repetition,
            "resp_path": str(self.resp_path),
            "bvp_path": str(self.bvp_path) if self.bvp_path else None,
            "rppg_path": str(self.rppg_path) if self.rppg_path else None,
        }


@dataclass(frozen=True, eq=False)
class Session:
    subject_id: str
    stage: Stage
    resp: Waveform
    bvp: Waveform | None = None
    rppg: Waveform | None = None
    repetition: int = 1

    def __post_init__(self):
        if self.bvp is None and self.rppg is None:
            raise InvalidInput(f"session {self.subject_id}/{self.stage.value} has no pulse waveform")

    @property
    def waveforms(self) -> list[Waveform]:
        return [w for w in (self.resp, self.bvp, self.rppg) if w is not None]

    @property
    def overlap(self) -> tuple[float, float]:
        ws = self.waveforms
        return max(w.start_s for w in ws), min(w.end_s for w in ws)

    @property
    def duration_s(self) -> float:
        lo, hi = self.overlap
        return max(0.0, hi - lo)

    def pulse(self, source: str) -> Waveform:
        source = source.lower()
        if source not in ("bvp", "rppg"):
            raise InvalidInput(f"unknown pulse source {source!r}; use 'bvp' or 'rppg'")
        w = getattr(self, source)
        if w is None:
            raise InvalidInput(f"session {self.subject_id}/{self.stage.value} has no {source} waveform")
        return w


@dataclass(frozen=True)
class CohortIndex:
    sessions: tuple[SessionDescriptor, ...]
    root: str

    def __len__(self) -> int:
        return len(self.sessions)

    def find(self, subject: str | None = None, stage: Stage | None = None,
             repetition: int | None = None) -> list[SessionDescriptor]:
        return [d for d in self.sessions
                if (subject is None or d.subject_id == subject)
                and (stage is None or d.stage == stage)
                and (repetition is None or d.repetition == repetition)]


def _resolve(root: Path, text: str) -> Path | None:
    text = text.strip()
    if not text:
        return None
    p = Path(text)
    return p if p.is_absolute() else root / p


def scan_cohort(root_path, manifest_path) -> CohortIndex:
    """Parse a manifest and check that every referenced file exists with a valid header.

    Only headers are read here; samples are loaded by :func:`load_session`.
    """
    root = Path(root_path)
    manifest = Path(manifest_path)
    if not manifest.is_absolute() and not manifest.is_file():
        manifest = root / manifest
    lines = _read_lines(manifest)
    body = [(i, ln) for i, ln in enumerate(lines, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ManifestError(f"{manifest}: empty manifest")
    header_no, header = body[0]
    fields = [f.strip() for f in next(csv.reader([header]))]
    missing = [f for f in MANIFEST_FIELDS[:4] if f not in fields]
    if missing:
        raise ManifestError(f"{manifest}:{header_no}: header lacks {', '.join(missing)}")
    seen: dict[tuple, int] = {}
    out = []
    for lineno, line in body[1:]:
        row = next(csv.reader([line]))
        if len(row) > len(fields):
            raise ManifestError(f"{manifest}:{lineno}: too many fields")
        rec = dict(zip(fields, [c.strip() for c in row]))
        where = f"{manifest}:{lineno}"
        subject = rec.get("subject", "")
        if not subject:
            raise ManifestError(f"{where}: empty subject")
        stage = parse_stage(rec.get("stage", ""))
        try:
            rep = int(rec.get("repetition") or 1)
        except ValueError:
            raise ManifestError(f"{where}: repetition must be an integer") from None
        resp = _resolve(root, rec.get("resp_path", ""))
        bvp = _resolve(root, rec.get("bvp_path", ""))
        rppg = _resolve(root, rec.get("rppg_path", ""))
        if resp is None:
            raise ManifestError(f"{where}: resp_path is required")
        if bvp is None and rppg is None:
            raise ManifestError(f"{where}: need bvp_path or rppg_path")
        desc = SessionDescriptor(subject, stage, rep, resp, bvp, rppg, rec.get("stage", ""))
        if desc.key in seen:
            raise ManifestError(
                f"{where}: duplicate session {subject}/{stage.value}/rep {rep} (first on line {seen[desc.key]})"
            )
        seen[desc.key] = lineno
        for p in (resp, bvp, rppg):
            if p is not None:
                if not p.is_file():
                    raise MissingFile(f"{where}: missing file {p}")
                check_waveform_header(p)
        out.append(desc)
    return CohortIndex(tuple(out), str(root))


def write_manifest(path, sessions, root=None) -> None:
    root = Path(root) if root is not None else Path(path).parent
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)

    def rel(p):
        if p is None:
            return ""
        p = Path(p)
        try:
            return p.relative_to(root).as_posix()
        except ValueError:
            return str(p)

    for d in sessions:
        writer.writerow([d.subject_id, d.stage_code or d.stage.value, d.repetition,
                         rel(d.resp_path), rel(d.bvp_path), rel(d.rppg_path)])
    atomic_write_text(path, buf.getvalue())


def load_session(desc: SessionDescriptor, min_overlap_s: float = MIN_OVERLAP_S) -> Session:
    resp = load_waveform_csv(desc.resp_path, Label.RESP)
    bvp = load_waveform_csv(desc.bvp_path, Label.BVP) if desc.bvp_path else None
    rppg = load_waveform_csv(desc.rppg_path, Label.RPPG) if desc.rppg_path else None
    session = Session(desc.subject_id, desc.stage, resp, bvp, rppg, desc.repetition)
    if session.duration_s < min_overlap_s:
        raise InsufficientData(
            f"session {desc.name}: waveforms overlap for {session.duration_s:.1f} s, need {min_overlap_s:g} s"
        )
    return session
