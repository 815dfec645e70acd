"""Synchrogram phases, the n:m synchronization index and episode statistics.

Heartbeats are point events ``t_k``; the respiratory phase ``phi_r(t_k)`` at
each beat is folded over ``m`` breaths, stretched by ``n`` so that n:m phase
locking collapses onto a single line, and the stability of that line over a
sliding window of beats gives the synchronization index.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyResult, InsufficientData, InvalidConfig
from .phase import PhaseSeries, phase_at, resp_rate
from .signal import EventSeries, _frozen_array, mean_rate

TWO_PI = 2.0 * np.pi


def _ratio_key(pair: tuple[int, int]) -> tuple[int, int]:
    # simpler ratios win ties
    n, m = pair
    return (n + m, n)


@dataclass(frozen=True)
class RatioGrid:
    """The n:m locking ratios tested at every beat, kept in tie-break order."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple((int(n), int(m)) for n, m in self.pairs)
        if not pairs:
            raise InvalidConfig("ratio grid is empty")
        for n, m in pairs:
            if n < 1 or m < 1:
                raise InvalidConfig(f"ratio {n}:{m} must have n, m >= 1")
            if math.gcd(n, m) != 1:
                raise InvalidConfig(f"ratio {n}:{m} is not reduced; use {n // math.gcd(n, m)}:{m // math.gcd(n, m)}")
            if not 1.5 <= n / m <= 15:
                raise InvalidConfig(f"ratio {n}:{m} lies outside [1.5, 15]")
        if len(set(pairs)) != len(pairs):
            raise InvalidConfig("ratio grid contains duplicates")
        object.__setattr__(self, "pairs", tuple(sorted(pairs, key=_ratio_key)))

    @classmethod
    def default(cls, n_max: int = 15) -> "RatioGrid":
        pairs = [(n, 1) for n in range(2, n_max + 1)]
        pairs += [(n, 2) for n in range(3, n_max + 1, 2)]
        return cls(tuple(pairs))

    @classmethod
    def parse(cls, text: str) -> "RatioGrid":
        """Parse ``"2:1,3:1,5:2"``; ``"default"`` gives :meth:`default`."""
        text = text.strip()
        if text == "default":
            return cls.default()
        pairs = []
        for item in text.split(","):
            try:
                n, m = item.strip().split(":")
                pairs.append((int(n), int(m)))
            except ValueError:
                raise InvalidConfig(f"cannot parse ratio {item!r}; expected 'n:m'") from None
        return cls(tuple(pairs))

    def __str__(self) -> str:
        return ",".join(f"{n}:{m}" for n, m in self.pairs)

    @property
    def m_values(self) -> tuple[int, ...]:
        return tuple(sorted({m for _, m in self.pairs}))


@dataclass(frozen=True)
class SynchroConfig:
    window_beats: int = 50
    half_window: int = 25
    gamma_threshold: float = 0.1
    min_episode_s: float = 5.0

    def __post_init__(self):
        if self.half_window < 1 or self.window_beats != 2 * self.half_window:
            raise InvalidConfig(
                f"window_beats ({self.window_beats}) must equal 2 * half_window ({self.half_window})"
            )
        if not 0 < self.gamma_threshold < 1:
            raise InvalidConfig(f"gamma_threshold must lie in (0, 1), got {self.gamma_threshold}")
        if not self.min_episode_s > 0:
            raise InvalidConfig(f"min_episode_s must be > 0, got {self.min_episode_s}")


@dataclass(frozen=True, eq=False)
class SyncCurve:
    """Synchronization degree at each beat that has a full window on both sides."""

    beat_times_s: np.ndarray
    degree: np.ndarray
    best_n: np.ndarray
    best_m: np.ndarray

    def __post_init__(self):
        t = _frozen_array(self.beat_times_s)
        d = _frozen_array(self.degree)
        n = np.array(self.best_n, dtype=int)
        m = np.array(self.best_m, dtype=int)
        if not (t.size == d.size == n.size == m.size):
            raise InvalidConfig("sync curve sequences differ in length")
        n.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "beat_times_s", t)
        object.__setattr__(self, "degree", d)
        object.__setattr__(self, "best_n", n)
        object.__setattr__(self, "best_m", m)

    def __len__(self) -> int:
        return self.degree.size


@dataclass(frozen=True)
class Episode:
    start_s: float
    end_s: float
    duration_s: float
    dominant_n: int
    dominant_m: int
    n_beats: int = 0
    mean_degree: float = field(default=float("nan"))


@dataclass(frozen=True)
class LongTermMetrics:
    min_pct: float
    max_pct: float
    num_sync: int
    freq_ratio: float


def psi_m(phi_r, m: int):
    """Respiratory phase folded over ``m`` breaths, in cycles: ``(phi_r mod 2*pi*m) / 2*pi``."""
    if m < 1:
        raise InvalidConfig(f"m must be >= 1, got {m}")
    out = np.mod(phi_r, TWO_PI * m) / TWO_PI
    # tiny negative inputs round up to exactly m
    out = np.where(out >= m, out - m, out)
    return float(out) if out.ndim == 0 else out


def big_psi(psi, n: int, m: int):
    """Map folded phase onto a single circle so n:m locking becomes one constant angle."""
    if n < 1 or m < 1:
        raise InvalidConfig(f"n and m must be >= 1, got n={n}, m={m}")
    out = (TWO_PI / m) * np.mod(np.multiply(psi, n), m)
    # rounding in the product can land exactly on 2*pi
    out = np.where(out >= TWO_PI, out - TWO_PI, out)
    return float(out) if out.ndim == 0 else out


def gamma(big_psis) -> float:
    """Squared length of the mean unit vector of the angles; 1 means perfect locking."""
    a = np.asarray(big_psis, dtype=float)
    if a.size < 2:
        raise EmptyResult(f"gamma needs at least 2 phases, got {a.size}")
    c = np.cos(a).mean()
    s = np.sin(a).mean()
    return float(min(1.0, max(0.0, c * c + s * s)))


def synchrogram(beats: EventSeries, resp_phase: PhaseSeries, m: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Synchrogram scatter ``(t_k, psi_m(t_k))`` for beats inside the phase span."""
    t = beats.times_s
    t = t[(t >= resp_phase.start_s) & (t <= resp_phase.end_s)]
    return t, psi_m(phase_at(resp_phase, t), m)


def _window_gamma(angles: np.ndarray, half: int) -> np.ndarray:
    """gamma over beats k-half..k+half excluding k itself, for every k with a full window."""
    n = 2 * half
    c = np.cos(angles)
    s = np.sin(angles)
    cc = np.concatenate([[0.0], np.cumsum(c)])
    cs = np.concatenate([[0.0], np.cumsum(s)])
    k = np.arange(half, angles.size - half)
    sc = cc[k + half + 1] - cc[k - half] - c[k]
    ss = cs[k + half + 1] - cs[k - half] - s[k]
    return np.clip((sc / n) ** 2 + (ss / n) ** 2, 0.0, 1.0)


def sync_curve(
    beats: EventSeries,
    resp_phase: PhaseSeries,
    grid: RatioGrid | None = None,
    cfg: SynchroConfig | None = None,
    use_interior: bool = True,
) -> SyncCurve:
    """Synchronization degree (max over the ratio grid) at each beat.

    The window for beat ``k`` holds the ``half_window`` beats on each side of
    it, not beat ``k`` itself. Beats without a full window are left out. With
    ``use_interior`` only beats in the reliable interior of the phase series
    are used.
    """
    grid = grid or RatioGrid.default()
    cfg = cfg or SynchroConfig()
    t = beats.times_s
    lo, hi = resp_phase.interior_span() if use_interior else (resp_phase.start_s, resp_phase.end_s)
    t = t[(t >= lo) & (t <= hi)]
    h = cfg.half_window
    if t.size < cfg.window_beats + 1:
        raise InsufficientData(
            f"{t.size} usable beats; need at least {cfg.window_beats + 1} for a {cfg.window_beats}-beat window"
        )
    phi = phase_at(resp_phase, t)
    folded = {m: psi_m(phi, m) for m in grid.m_values}
    gammas = np.empty((len(grid.pairs), t.size - 2 * h))
    for i, (n, m) in enumerate(grid.pairs):
        gammas[i] = _window_gamma(big_psi(folded[m], n, m), h)

    degree = gammas.max(axis=0)
    # first grid entry (simplest ratio) within rounding of the maximum
    best = np.argmax(gammas >= degree - 1e-12, axis=0)
    pairs = np.array(grid.pairs)
    return SyncCurve(t[h:t.size - h], degree, pairs[best, 0], pairs[best, 1])


def _dominant(n: np.ndarray, m: np.ndarray) -> tuple[int, int]:
    counts = Counter(zip(n.tolist(), m.tolist()))
    top = max(counts.values())
    return min((p for p, c in counts.items() if c == top), key=_ratio_key)


def detect_episodes(curve: SyncCurve, cfg: SynchroConfig | None = None) -> list[Episode]:
    """Maximal runs of beats with degree above threshold lasting at least ``min_episode_s``.

    Duration runs from the first to the last above-threshold beat of the run.
    """
    cfg = cfg or SynchroConfig()
    if len(curve) == 0:
        return []
    above = curve.degree > cfg.gamma_threshold
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)  # exclusive
    t = curve.beat_times_s
    episodes = []
    for a, b in zip(starts, stops):
        duration = t[b - 1] - t[a]
        if duration < cfg.min_episode_s:
            continue
        n, m = _dominant(curve.best_n[a:b], curve.best_m[a:b])
        episodes.append(Episode(
            start_s=float(t[a]), end_s=float(t[b - 1]), duration_s=float(duration),
            dominant_n=n, dominant_m=m, n_beats=int(b - a),
            mean_degree=float(curve.degree[a:b].mean()),
        ))
    return episodes


def long_term_metrics(
    curve: SyncCurve,
    episodes: list[Episode],
    beats: EventSeries,
    resp_phase: PhaseSeries,
) -> LongTermMetrics:
    if len(curve) == 0:
        raise InsufficientData("synchronization curve is empty")
    return LongTermMetrics(
        min_pct=100.0 * float(curve.degree.min()),
        max_pct=100.0 * float(curve.degree.max()),
        num_sync=len(episodes),
        freq_ratio=mean_rate(beats) / resp_rate(resp_phase),
    )
