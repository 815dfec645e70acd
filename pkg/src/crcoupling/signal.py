"""Waveform container and the signal primitives used before any coupling analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import find_peaks

from .errors import EmptyResult, InsufficientData, InvalidConfig, InvalidInput


class Label(str, Enum):
    BVP = "BVP"
    RPPG = "RPPG"
    RESP = "RESP"


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled scalar series; sample ``i`` sits at ``start_s + i / rate_hz``."""

    samples: np.ndarray
    rate_hz: float
    start_s: float = 0.0
    label: Label = Label.BVP

    def __post_init__(self):
        samples = _frozen_array(self.samples)
        if samples.ndim != 1 or samples.size < 2:
            raise InvalidInput("waveform needs a 1-D array of at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise InvalidInput("waveform contains NaN or Inf samples")
        rate = float(self.rate_hz)
        if not math.isfinite(rate) or rate <= 0:
            raise InvalidInput(f"rate_hz must be finite and > 0, got {self.rate_hz!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rate_hz", rate)
        object.__setattr__(self, "start_s", float(self.start_s))
        object.__setattr__(self, "label", Label(self.label))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.start_s + np.arange(self.samples.size) / self.rate_hz

    @property
    def duration_s(self) -> float:
        return (self.samples.size - 1) / self.rate_hz

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.rate_hz, self.start_s, self.label)


@dataclass(frozen=True, eq=False)
class EventSeries:
    """Strictly increasing event times in seconds (heartbeats, anchor points)."""

    times_s: np.ndarray

    def __post_init__(self):
        times = _frozen_array(self.times_s)
        if times.ndim != 1:
            raise InvalidInput("event times must be 1-D")
        if not np.all(np.isfinite(times)):
            raise InvalidInput("event times must be finite")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidInput("event times must be strictly increasing")
        object.__setattr__(self, "times_s", times)

    def __len__(self) -> int:
        return self.times_s.size

    def shifted(self, dt: float) -> "EventSeries":
        return EventSeries(self.times_s + dt)


@dataclass(frozen=True)
class PeakConfig:
    # 0.27 s between beats caps detection at roughly 220 bpm
    min_interval_s: float = 0.27
    prominence_frac: float = 0.3

    def __post_init__(self):
        if not (self.min_interval_s > 0 and math.isfinite(self.min_interval_s)):
            raise InvalidConfig(f"min_interval_s must be > 0, got {self.min_interval_s}")
        if not 0 < self.prominence_frac < 1:
            raise InvalidConfig(f"prominence_frac must lie in (0, 1), got {self.prominence_frac}")


def _parabolic_offset(y0: np.ndarray, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
    """Vertex offset (in samples, within [-0.5, 0.5]) of the parabola through three points."""
    denom = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom < 0, 0.5 * (y0 - y2) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


def detect_peaks(w: Waveform, cfg: PeakConfig | None = None) -> EventSeries:
    """Heartbeat times from a pulse waveform.

    Local maxima must reach a prominence of ``cfg.prominence_frac`` times the
    5-95 percentile range of the samples and be at least ``cfg.min_interval_s``
    apart. Each maximum is refined to sub-sample precision by fitting a
    parabola through the three samples around it.
    """
    cfg = cfg or PeakConfig()
    if w.label not in (Label.BVP, Label.RPPG):
        raise InvalidInput(f"peak detection expects a pulse waveform, got {w.label.value}")
    if w.duration_s < 2 * cfg.min_interval_s:
        raise InsufficientData(
            f"waveform lasts {w.duration_s:.3f} s, need at least {2 * cfg.min_interval_s:.3f} s"
        )
    x = w.samples
    p5, p95 = np.percentile(x, [5, 95])
    span = p95 - p5
    if span <= 0:
        raise EmptyResult("signal has no usable range; no peaks")
    distance = max(1, int(math.ceil(cfg.min_interval_s * w.rate_hz - 1e-9)))
    idx, _ = find_peaks(x, prominence=cfg.prominence_frac * span, distance=distance)
    if idx.size < 2:
        raise EmptyResult(f"found {idx.size} peak(s); at least 2 are required")

    off = _parabolic_offset(x[idx - 1], x[idx], x[idx + 1])
    times = w.start_s + (idx + off) / w.rate_hz
    heights = x[idx]

    # refinement can pull neighbours slightly closer than the sample-level spacing
    keep = list(range(idx.size))
    while True:
        t = times[keep]
        gaps = np.diff(t)
        bad = np.flatnonzero(gaps < cfg.min_interval_s)
        if bad.size == 0:
            break
        j = bad[0]
        a, b = keep[j], keep[j + 1]
        keep.remove(a if heights[a] < heights[b] else b)
    times = times[keep]
    if times.size < 2:
        raise EmptyResult("fewer than 2 peaks after spacing enforcement")
    return EventSeries(times)


def resample(w: Waveform, target_hz: float) -> Waveform:
    """Linear interpolation onto a uniform ``target_hz`` grid covering the same span."""
    if not (target_hz > 0 and math.isfinite(target_hz)):
        raise InvalidConfig(f"target_hz must be > 0, got {target_hz}")
    if target_hz == w.rate_hz:
        return w
    n = int(math.floor(w.duration_s * target_hz + 1e-9)) + 1
    if n < 2:
        raise InvalidConfig(f"target_hz {target_hz} leaves fewer than 2 samples")
    src = np.arange(w.samples.size) / w.rate_hz
    dst = np.arange(n) / target_hz
    return Waveform(np.interp(dst, src, w.samples), target_hz, w.start_s, w.label)


def bandpass(w: Waveform, lo_hz: float, hi_hz: float, taper: float = 0.5) -> Waveform:
    """Zero-phase band-pass by spectral masking with raised-cosine edges.

    The record is mirrored (even extension) before the FFT so the implicit
    periodic continuation has no jump at the ends. The pass band is flat on
    ``[lo_hz, hi_hz]``; the gain rolls off to zero over ``[lo_hz * (1 - taper), lo_hz]``
    and ``[hi_hz, hi_hz * (1 + taper)]``. Any residual mean is removed, so the
    output is exactly zero-mean up to rounding.
    """
    nyq = w.rate_hz / 2
    if not (0 < lo_hz < hi_hz < nyq):
        raise InvalidConfig(f"need 0 < lo_hz < hi_hz < {nyq:g} Hz, got [{lo_hz}, {hi_hz}]")
    if not 0 < taper < 1:
        raise InvalidConfig("taper must lie in (0, 1)")
    x = w.samples - w.samples.mean()
    n = x.size
    ext = np.concatenate([x, x[::-1]])
    spectrum = np.fft.rfft(ext)
    f = np.fft.rfftfreq(ext.size, d=1.0 / w.rate_hz)
    spectrum *= _band_gain(f, lo_hz, hi_hz, taper)
    y = np.fft.irfft(spectrum, n=ext.size)[:n]
    y -= y.mean()
    return w.with_samples(y)


def _band_gain(f: np.ndarray, lo: float, hi: float, taper: float) -> np.ndarray:
    g = np.zeros_like(f)
    lo0 = lo * (1 - taper)
    hi1 = hi * (1 + taper)
    g[(f >= lo) & (f <= hi)] = 1.0
    rise = (f > lo0) & (f < lo)
    g[rise] = 0.5 * (1 - np.cos(np.pi * (f[rise] - lo0) / (lo - lo0)))
    fall = (f > hi) & (f < hi1)
    g[fall] = 0.5 * (1 + np.cos(np.pi * (f[fall] - hi) / (hi1 - hi)))
    return g


def zscore(w: Waveform) -> Waveform:
    sd = w.samples.std()
    if sd == 0:
        raise InvalidInput(f"{w.label.value} waveform is constant; cannot normalise")
    return w.with_samples((w.samples - w.samples.mean()) / sd)


def mean_rate(events: EventSeries) -> float:
    """Average event rate in events per second: ``(count - 1) / (last - first)``."""
    t = events.times_s
    if t.size < 2:
        raise EmptyResult("mean_rate needs at least 2 events")
    return (t.size - 1) / (t[-1] - t[0])
