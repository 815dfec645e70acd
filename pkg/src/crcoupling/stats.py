"""Paired significance tests, correlation, spectral heart rate and agreement metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import detrend

from .errors import AlignmentError, InsufficientData, InvalidConfig, InvalidInput
from .signal import Waveform
from .synchro import SyncCurve

EXACT_MAX_N = 15


@dataclass(frozen=True)
class PairedSample:
    labels: tuple
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 1 or a.shape != b.shape or a.size < 1:
            raise InvalidInput("paired sample needs two 1-D sequences of equal non-zero length")
        labels = tuple(self.labels) if self.labels is not None else tuple(range(a.size))
        if len(labels) != a.size:
            raise InvalidInput("labels must match the number of pairs")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of(cls, a, b, labels=None) -> "PairedSample":
        return cls(labels, a, b)


class WilcoxonResult(NamedTuple):
    statistic: float
    pvalue: float


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return ranks


def _null_rank_sum_counts(n: int) -> np.ndarray:
    """Number of sign assignments giving each positive-rank sum 0..n(n+1)/2."""
    counts = np.zeros(n * (n + 1) // 2 + 1, dtype=np.int64)
    counts[0] = 1
    for r in range(1, n + 1):
        counts[r:] = counts[r:] + counts[:-r].copy()
    return counts


def wilcoxon_signed_rank(s: PairedSample, alternative: str = "two-sided") -> WilcoxonResult:
    """Wilcoxon signed-rank test on ``a - b``.

    Zero differences are dropped and tied magnitudes share their average
    rank. Without ties and with at most 15 pairs the p-value is exact
    (null distribution of the positive rank sum over all 2**n sign
    patterns); otherwise the normal approximation with tie and continuity
    correction is used. The two-sided statistic is ``min(W+, W-)``; the
    one-sided ones (``"greater"``: a tends to exceed b, ``"less"``) report ``W+``.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise InvalidConfig(f"unknown alternative {alternative!r}")
    d = s.a - s.b
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise InsufficientData(f"{n} non-zero differences; the test needs at least 5")
    mag = np.abs(d)
    ranks = _average_ranks(mag)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    total = n * (n + 1) / 2
    tied = np.unique(mag).size < n

    if not tied and n <= EXACT_MAX_N:
        counts = _null_rank_sum_counts(n)
        cdf = np.cumsum(counts) / 2.0 ** n
        wp = int(round(w_plus))
        p_le = float(cdf[wp])
        p_ge = float(1.0 - (cdf[wp - 1] if wp > 0 else 0.0))
        if alternative == "two-sided":
            w = min(w_plus, w_minus)
            p = min(1.0, 2.0 * float(cdf[int(round(w))]))
        else:
            w = w_plus
            p = p_ge if alternative == "greater" else p_le
        return WilcoxonResult(w, p)

    mu = total / 2
    _, t = np.unique(mag, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(t ** 3 - t)) / 48
    sd = math.sqrt(var)
    if alternative == "two-sided":
        z = (abs(w_plus - mu) - 0.5) / sd
        p = min(1.0, math.erfc(z / math.sqrt(2))) if z > 0 else 1.0
        return WilcoxonResult(min(w_plus, w_minus), p)
    shift = -0.5 if alternative == "greater" else 0.5
    z = (w_plus - mu + shift) / sd
    upper = 0.5 * math.erfc(z / math.sqrt(2))
    return WilcoxonResult(w_plus, upper if alternative == "greater" else 1.0 - upper)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInput("pearson needs two 1-D sequences of equal length")
    if x.size < 3:
        raise InvalidInput(f"pearson needs at least 3 pairs, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise InvalidInput("correlation is undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def estimate_hr(w: Waveform, window_s: float = 30.0, band_bpm: tuple[float, float] = (40.0, 220.0)) -> np.ndarray:
    """Heart rate (bpm) per non-overlapping window from the spectral peak in ``band_bpm``.

    Each window is linearly detrended and zero-padded so the frequency grid
    is at least as fine as 0.5 bpm. No SNR gating is applied: white noise
    still yields the in-band argmax.
    """
    lo, hi = band_bpm
    if window_s < 10:
        raise InvalidConfig(f"window_s must be >= 10 s, got {window_s}")
    if not 30 < lo < hi < 240:
        raise InvalidConfig(f"band must lie within (30, 240) bpm, got {band_bpm}")
    n_win = int(round(window_s * w.rate_hz))
    count = len(w) // n_win
    if count == 0:
        raise InsufficientData(f"record of {w.duration_s:.1f} s is shorter than one {window_s:g} s window")
    nfft = max(n_win, int(math.ceil(120 * w.rate_hz)))
    freqs_bpm = 60.0 * np.fft.rfftfreq(nfft, d=1.0 / w.rate_hz)
    band = (freqs_bpm >= lo) & (freqs_bpm <= hi)
    out = np.empty(count)
    for i in range(count):
        seg = detrend(w.samples[i * n_win:(i + 1) * n_win])
        mag = np.abs(np.fft.rfft(seg, n=nfft))
        out[i] = freqs_bpm[band][np.argmax(mag[band])]
    return out


@dataclass(frozen=True)
class AgreementReport:
    mae: float
    mape: float
    rmse: float
    pearson_r: float | None

    @property
    def r_defined(self) -> bool:
        return self.pearson_r is not None


def agreement(pred_hr, ref_hr) -> AgreementReport:
    """MAE, MAPE (%), RMSE and Pearson r of predicted against reference heart rates.

    ``pearson_r`` is None when either side is constant or there are fewer
    than 3 pairs.
    """
    p = np.asarray(pred_hr, dtype=float)
    r = np.asarray(ref_hr, dtype=float)
    if p.shape != r.shape or p.ndim != 1 or p.size < 2:
        raise InvalidInput("agreement needs two 1-D sequences of equal length >= 2")
    if np.any(r <= 0):
        raise InvalidInput("reference rates must be > 0 for MAPE")
    err = p - r
    try:
        rho = pearson(p, r)
    except InvalidInput:
        rho = None
    return AgreementReport(
        mae=float(np.mean(np.abs(err))),
        mape=float(np.mean(np.abs(err) / r) * 100),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        pearson_r=rho,
    )


@dataclass(frozen=True, eq=False)
class CurveAlignment:
    times_a: np.ndarray
    times_b: np.ndarray
    degree_a: np.ndarray
    degree_b: np.ndarray
    dropped_a: int
    dropped_b: int

    @property
    def pairs(self) -> int:
        return self.degree_a.size


def align_curves(a: SyncCurve, b: SyncCurve, max_gap_s: float = 0.25,
                 min_fraction: float = 0.5) -> CurveAlignment:
    """Pair points of two synchronization curves by nearest beat time.

    Each point of ``a`` is matched to its nearest neighbour in ``b``; matches
    further apart than ``max_gap_s`` are dropped, and where several points of
    ``a`` claim the same point of ``b`` only the closest survives. Fewer
    pairs than ``min_fraction`` of the longer curve raises AlignmentError.
    """
    ta, tb = a.beat_times_s, b.beat_times_s
    if ta.size == 0 or tb.size == 0:
        raise AlignmentError("cannot align an empty curve")
    j = np.clip(np.searchsorted(tb, ta), 1, max(tb.size - 1, 1))
    cand = np.stack([j - 1, np.minimum(j, tb.size - 1)])
    gaps = np.abs(tb[cand] - ta)
    pick = cand[np.argmin(gaps, axis=0), np.arange(ta.size)]
    gap = np.abs(tb[pick] - ta)
    best: dict[int, int] = {}
    for i in np.flatnonzero(gap <= max_gap_s):
        k = int(pick[i])
        if k not in best or gap[i] < gap[best[k]]:
            best[k] = int(i)
    ia = np.array(sorted(best.values()), dtype=int)
    ib = pick[ia]
    need = min_fraction * max(ta.size, tb.size)
    if ia.size < need:
        raise AlignmentError(
            f"only {ia.size} of {max(ta.size, tb.size)} curve points pair within {max_gap_s} s"
        )
    return CurveAlignment(ta[ia], tb[ib], a.degree[ia], b.degree[ib],
                          dropped_a=int(ta.size - ia.size), dropped_b=int(tb.size - ib.size))


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
