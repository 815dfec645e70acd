"""Instantaneous respiratory phase from the analytic signal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

from .errors import InvalidConfig, InvalidInput, OutOfRange
from .signal import Waveform, _frozen_array

EDGE_FRACTION = 0.02


@dataclass(frozen=True, eq=False)
class PhaseSeries:
    """Unwrapped phase on the grid of the waveform it came from.

    The first and last ``edge_frac`` of the samples carry boundary artefacts of
    the discrete analytic signal; :meth:`interior_mask` marks the rest.
    """

    phase_rad: np.ndarray
    rate_hz: float
    start_s: float = 0.0
    edge_frac: float = EDGE_FRACTION

    def __post_init__(self):
        phase = _frozen_array(self.phase_rad)
        if phase.ndim != 1 or phase.size < 2:
            raise InvalidInput("phase series needs at least 2 samples")
        if not 0 <= self.edge_frac < 0.5:
            raise InvalidConfig(f"edge_frac must lie in [0, 0.5), got {self.edge_frac}")
        object.__setattr__(self, "phase_rad", phase)
        object.__setattr__(self, "rate_hz", float(self.rate_hz))
        object.__setattr__(self, "start_s", float(self.start_s))

    def __len__(self) -> int:
        return self.phase_rad.size

    @property
    def times(self) -> np.ndarray:
        return self.start_s + np.arange(self.phase_rad.size) / self.rate_hz

    @property
    def end_s(self) -> float:
        return self.start_s + (self.phase_rad.size - 1) / self.rate_hz

    def _edge_count(self) -> int:
        return int(math.ceil(self.edge_frac * self.phase_rad.size))

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.phase_rad.size, dtype=bool)
        k = self._edge_count()
        if k:
            mask[:k] = False
            mask[-k:] = False
        return mask

    def interior_span(self) -> tuple[float, float]:
        k = self._edge_count()
        return (self.start_s + k / self.rate_hz,
                self.start_s + (self.phase_rad.size - 1 - k) / self.rate_hz)


def analytic_phase(w: Waveform, edge_frac: float = EDGE_FRACTION) -> PhaseSeries:
    """Unwrapped angle of ``x + i*H[x]`` for a zero-mean oscillatory waveform.

    The mean is subtracted first, so a residual offset does not bias the phase.
    """
    if len(w) < 16:
        raise InvalidInput(f"analytic phase needs at least 16 samples, got {len(w)}")
    x = w.samples - w.samples.mean()
    peak = float(np.max(np.abs(w.samples)))
    rms = float(np.sqrt(np.mean(x * x)))
    if peak == 0 or rms < 1e-12 * peak:
        raise InvalidInput("signal is (near-)constant; its phase is undefined")
    z = hilbert(x)
    return PhaseSeries(np.unwrap(np.angle(z)), w.rate_hz, w.start_s, edge_frac)


def phase_at(p: PhaseSeries, t_s):
    """Linearly interpolated unwrapped phase at ``t_s`` (scalar or array)."""
    t = np.asarray(t_s, dtype=float)
    tol = 1e-9 / p.rate_hz
    if np.any(t < p.start_s - tol) or np.any(t > p.end_s + tol):
        raise OutOfRange(
            f"time outside phase span [{p.start_s:.6g}, {p.end_s:.6g}] s"
        )
    pos = (t - p.start_s) * p.rate_hz
    out = np.interp(pos, np.arange(p.phase_rad.size), p.phase_rad)
    return float(out) if out.ndim == 0 else out


def resp_rate(p: PhaseSeries) -> float:
    """Mean respiratory frequency (cycles/s) over the interior of the series."""
    idx = np.flatnonzero(p.interior_mask())
    if idx.size < 2:
        raise InvalidInput("phase series has no interior to measure")
    advance = p.phase_rad[idx[-1]] - p.phase_rad[idx[0]]
    if advance < 2 * np.pi:
        raise InvalidInput(
            f"interior phase advance {advance:.3f} rad is less than one full cycle"
        )
    duration = (idx[-1] - idx[0]) / p.rate_hz
    return advance / (2 * np.pi * duration)
