"""Coupled cardiorespiratory phase oscillator used as a ground-truth generator.

Respiration advances at a constant rate. The cardiac phase is driven by its
own frequency, modulated by respiration (sinus arrhythmia), pulled towards
n:m locking with respiration by a coupling term, and jittered by Gaussian
phase noise::

    dphi_r/dt = 2*pi*resp_hz
    dphi_c/dt = 2*pi*heart_hz*(1 + rsa_gain*sin(phi_r)) + epsilon*sin((n/m)*phi_r - phi_c) + noise

A beat fires whenever ``phi_c`` passes a multiple of 2*pi. The respiration
waveform is ``sin(phi_r)``; the pulse waveform places an asymmetric
raised-cosine bump (short rise, decay until the next rise) at every beat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig
from .signal import EventSeries, Label, Waveform


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 180.0
    resp_hz: float = 0.25
    heart_hz: float = 1.2
    couple_n: int = 4
    couple_m: int = 1
    epsilon: float = 0.0
    rsa_gain: float = 0.0
    phase_noise: float = 0.0
    seed: int = 0
    pulse_rate_hz: float = 20.0
    resp_rate_hz: float = 50.0
    step_hz: float = 200.0
    # respiration-induced baseline shift of the pulse (pulse units); None follows rsa_gain
    baseline_gain: float | None = None
    rise_s: float = 0.2
    # slow sinusoidal modulation of epsilon: epsilon * max(0, 1 + depth * sin(2*pi*f*t + random phase))
    epsilon_mod_depth: float = 0.0
    epsilon_mod_hz: float = 0.025

    def __post_init__(self):
        for name in ("duration_s", "resp_hz", "heart_hz", "pulse_rate_hz", "resp_rate_hz", "step_hz", "rise_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidConfig(f"{name} must be finite and > 0, got {v}")
        if self.couple_n < 1 or self.couple_m < 1:
            raise InvalidConfig("couple_n and couple_m must be >= 1")
        if self.epsilon < 0 or self.phase_noise < 0:
            raise InvalidConfig("epsilon and phase_noise must be >= 0")
        if not 0 <= self.rsa_gain < 1:
            raise InvalidConfig(f"rsa_gain must lie in [0, 1), got {self.rsa_gain}")
        if self.baseline_gain is not None and self.baseline_gain < 0:
            raise InvalidConfig("baseline_gain must be >= 0")
        if self.epsilon_mod_depth < 0 or not self.epsilon_mod_hz > 0:
            raise InvalidConfig("epsilon_mod_depth must be >= 0 and epsilon_mod_hz > 0")
        if self.step_hz < 10 * max(self.heart_hz, self.resp_hz):
            raise InvalidConfig("step_hz must be at least 10x the fastest oscillator")

    @property
    def effective_baseline_gain(self) -> float:
        return self.rsa_gain if self.baseline_gain is None else self.baseline_gain

    @property
    def detuning_rad_s(self) -> float:
        """Angular mismatch between the n:m-scaled respiratory and the cardiac frequency."""
        return 2 * np.pi * (self.couple_n / self.couple_m * self.resp_hz - self.heart_hz)


@dataclass(frozen=True, eq=False)
class SynthTruth:
    beat_times_s: np.ndarray
    resp_phase_truth: np.ndarray
    locked: bool
    resp_phase0: float
    resp_hz: float

    def resp_phase(self, t) -> np.ndarray:
        """Exact respiratory phase (radians, unwrapped) at time ``t``."""
        return self.resp_phase0 + 2 * np.pi * self.resp_hz * np.asarray(t, dtype=float)

    @property
    def beats(self) -> EventSeries:
        return EventSeries(self.beat_times_s)


def _integrate_cardiac(cfg: SynthConfig, phi_r: np.ndarray, phi_c0: float,
                       noise: np.ndarray, eps: np.ndarray) -> np.ndarray:
    dt = 1.0 / cfg.step_hz
    drive = (2 * np.pi * cfg.heart_hz * (1 + cfg.rsa_gain * np.sin(phi_r))).tolist()
    target = (cfg.couple_n / cfg.couple_m * phi_r).tolist()
    kicks = noise.tolist()
    pull = eps.tolist()
    sin = math.sin
    out = [phi_c0] * len(drive)
    phi = phi_c0
    for i in range(len(drive) - 1):
        phi += dt * (drive[i] + pull[i] * sin(target[i] - phi)) + kicks[i]
        out[i + 1] = phi
    return np.asarray(out)


def _beat_times(t: np.ndarray, phi_c: np.ndarray) -> np.ndarray:
    cycles = np.floor(phi_c / (2 * np.pi))
    high = np.maximum.accumulate(cycles)
    # count a beat only the first time a new cycle is reached, so jitter cannot re-fire it
    idx = np.flatnonzero(np.diff(high) > 0)
    level = 2 * np.pi * high[idx + 1]
    p0, p1 = phi_c[idx], phi_c[idx + 1]
    frac = np.clip((level - p0) / np.where(p1 > p0, p1 - p0, 1.0), 0.0, 1.0)
    return t[idx] + frac * (t[idx + 1] - t[idx])


def render_pulse(beat_times, n_samples: int, rate_hz: float, rise_s: float = 0.2) -> np.ndarray:
    """Pulse waveform with a unit bump peaking at every beat time.

    Each bump rises over ``min(rise_s, 0.3 * interval)`` with a half raised
    cosine and decays with a half raised cosine until the next bump starts,
    so there are no flat stretches between beats. Virtual beats at the mean
    interval pad both ends of the record.
    """
    beats = np.asarray(beat_times, dtype=float)
    t = np.arange(n_samples) / rate_hz
    if beats.size < 2:
        raise InvalidConfig("need at least 2 beats to render a pulse waveform")
    step = float(np.mean(np.diff(beats)))
    head = np.arange(beats[0] - step, t[0] - 2 * step, -step)[::-1]
    tail = np.arange(beats[-1] + step, t[-1] + 2 * step, step)
    b = np.concatenate([head, beats, tail])
    intervals = np.diff(b)
    rise = np.minimum(rise_s, 0.3 * np.concatenate([[intervals[0]], intervals]))

    j = np.clip(np.searchsorted(b, t, side="left"), 1, b.size - 1)
    nxt, prev = b[j], b[j - 1]
    r = rise[j]
    rising = t >= nxt - r
    out = np.empty_like(t)
    out[rising] = 0.5 * (1 - np.cos(np.pi * (t[rising] - nxt[rising] + r[rising]) / r[rising]))
    dec = ~rising
    span = nxt[dec] - r[dec] - prev[dec]
    out[dec] = 0.5 * (1 + np.cos(np.pi * (t[dec] - prev[dec]) / span))
    return out


def generate(cfg: SynthConfig) -> tuple[Waveform, Waveform, SynthTruth]:
    """Simulate one session: ``(respiration, pulse, truth)``; deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    phi_r0, phi_c0, mod0 = rng.uniform(0, 2 * np.pi, size=3)
    steps = int(math.ceil(cfg.duration_s * cfg.step_hz))
    t = np.arange(steps + 1) / cfg.step_hz
    phi_r = phi_r0 + 2 * np.pi * cfg.resp_hz * t
    noise = rng.normal(0.0, cfg.phase_noise, size=steps) if cfg.phase_noise > 0 else np.zeros(steps)
    eps = cfg.epsilon * np.maximum(0.0, 1 + cfg.epsilon_mod_depth * np.sin(2 * np.pi * cfg.epsilon_mod_hz * t + mod0))
    phi_c = _integrate_cardiac(cfg, phi_r, phi_c0, noise, eps)
    beats = _beat_times(t, phi_c)
    beats = beats[beats <= cfg.duration_s]

    n_resp = int(round(cfg.duration_s * cfg.resp_rate_hz))
    tr = np.arange(n_resp) / cfg.resp_rate_hz
    resp = Waveform(np.sin(phi_r0 + 2 * np.pi * cfg.resp_hz * tr), cfg.resp_rate_hz, 0.0, Label.RESP)

    n_pulse = int(round(cfg.duration_s * cfg.pulse_rate_hz))
    tp = np.arange(n_pulse) / cfg.pulse_rate_hz
    pulse = render_pulse(beats, n_pulse, cfg.pulse_rate_hz, cfg.rise_s)
    pulse = pulse - cfg.effective_baseline_gain * np.sin(phi_r0 + 2 * np.pi * cfg.resp_hz * tp)

    truth = SynthTruth(
        beat_times_s=beats,
        resp_phase_truth=phi_r0 + 2 * np.pi * cfg.resp_hz * beats,
        # mean-field locking condition; sinus-arrhythmia modulation is ignored
        locked=bool(cfg.epsilon >= abs(cfg.detuning_rad_s)),
        resp_phase0=float(phi_r0),
        resp_hz=cfg.resp_hz,
    )
    return resp, Waveform(pulse, cfg.pulse_rate_hz, 0.0, Label.BVP), truth


def render_rppg(truth: SynthTruth, cfg: SynthConfig, jitter_s: float = 0.0, seed: int = 0) -> Waveform:
    """Pulse waveform re-rendered from the true beats, each shifted by N(0, jitter_s) seconds.

    Stands in for a camera-derived pulse: same rhythm, imperfect beat timing.
    """
    if jitter_s < 0:
        raise InvalidConfig("jitter_s must be >= 0")
    rng = np.random.default_rng(seed)
    beats = np.sort(truth.beat_times_s + rng.normal(0.0, jitter_s, truth.beat_times_s.size))
    n = int(round(cfg.duration_s * cfg.pulse_rate_hz))
    tp = np.arange(n) / cfg.pulse_rate_hz
    pulse = render_pulse(beats, n, cfg.pulse_rate_hz, cfg.rise_s)
    pulse = pulse - cfg.effective_baseline_gain * np.sin(truth.resp_phase(tp))
    return Waveform(pulse, cfg.pulse_rate_hz, 0.0, Label.RPPG)
