"""Bivariate phase-rectified signal averaging (pulse triggers, respiration target)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyResult, InsufficientData, InvalidConfig, InvalidInput
from .signal import EventSeries, Waveform, _frozen_array, resample


class AnchorKind(str, Enum):
    DECLINE = "decline"
    ACCELERATE = "accelerate"


@dataclass(frozen=True)
class BprsaConfig:
    segment_s: float = 4.0
    target_rate_hz: float = 50.0

    def __post_init__(self):
        if not (self.segment_s > 0 and math.isfinite(self.segment_s)):
            raise InvalidConfig(f"segment_s must be > 0, got {self.segment_s}")
        if not (self.target_rate_hz > 0 and math.isfinite(self.target_rate_hz)):
            raise InvalidConfig(f"target_rate_hz must be > 0, got {self.target_rate_hz}")
        if self.half_len < 1:
            raise InvalidConfig("segment is shorter than one target sample on each side")

    @property
    def half_len(self) -> int:
        return int(round(self.segment_s * self.target_rate_hz / 2))


@dataclass(frozen=True, eq=False)
class BprsaResult:
    avg_segment: np.ndarray
    anchor_count: int
    mra: float
    sap: float
    rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "avg_segment", _frozen_array(self.avg_segment))

    @property
    def lags_s(self) -> np.ndarray:
        half = self.avg_segment.size // 2
        return np.arange(-half, half + 1) / self.rate_hz


def find_anchors(trigger: Waveform, kind: AnchorKind | str) -> EventSeries:
    """Sample times where the trigger falls (DECLINE) or rises (ACCELERATE) from the previous sample."""
    kind = AnchorKind(kind)
    if len(trigger) < 3:
        raise InvalidInput("trigger needs at least 3 samples")
    d = np.diff(trigger.samples)
    idx = np.flatnonzero(d < 0 if kind is AnchorKind.DECLINE else d > 0) + 1
    if idx.size == 0:
        raise EmptyResult(f"no {kind.value} anchors in trigger signal")
    return EventSeries(trigger.start_s + idx / trigger.rate_hz)


def feature_mra(avg_segment) -> float:
    """Peak-to-trough amplitude of the averaged segment."""
    seg = np.asarray(avg_segment, dtype=float)
    if seg.size == 0:
        raise InvalidInput("empty segment")
    return float(seg.max() - seg.min())


def feature_sap(avg_segment, target_rate_hz: float) -> float:
    """Central-difference slope (units/s) at the centre sample, where the anchor sits."""
    seg = np.asarray(avg_segment, dtype=float)
    if seg.size < 3 or seg.size % 2 == 0:
        raise InvalidInput(f"segment must have an odd length >= 3, got {seg.size}")
    c = seg.size // 2
    return float((seg[c + 1] - seg[c - 1]) * target_rate_hz / 2)


def average_segments(target: Waveform, anchors: EventSeries, cfg: BprsaConfig | None = None,
                     chunk: int = 4096) -> BprsaResult:
    """Mean of the target segments centred on every anchor with a full window in range.

    The target is first resampled to ``cfg.target_rate_hz``; segment values
    at ``anchor + k / rate`` are read off by linear interpolation.
    """
    cfg = cfg or BprsaConfig()
    target = resample(target, cfg.target_rate_hz)
    rate = cfg.target_rate_hz
    half = cfg.half_len
    reach = half / rate
    tol = 1e-9 / rate
    a = anchors.times_s
    a = a[(a - reach >= target.start_s - tol) & (a + reach <= target.end_s + tol)]
    if a.size == 0:
        raise InsufficientData(f"no anchor has a full +/-{reach:g} s window inside the target")

    offsets = np.arange(-half, half + 1) / rate
    grid = np.arange(len(target)) / rate
    rel = a - target.start_s
    total = np.zeros(offsets.size)
    for i in range(0, a.size, chunk):
        pts = rel[i:i + chunk, None] + offsets[None, :]
        total += np.interp(pts.ravel(), grid, target.samples).reshape(pts.shape).sum(axis=0)
    avg = total / a.size
    return BprsaResult(avg, int(a.size), feature_mra(avg), feature_sap(avg, rate), rate)


def bprsa(trigger: Waveform, target: Waveform, kind: AnchorKind | str,
          cfg: BprsaConfig | None = None) -> BprsaResult:
    return average_segments(target, find_anchors(trigger, kind), cfg)
