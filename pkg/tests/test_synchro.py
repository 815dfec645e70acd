import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crcoupling.errors import EmptyResult, InsufficientData, InvalidConfig
from crcoupling.phase import PhaseSeries
from crcoupling.signal import EventSeries
from crcoupling.synchro import (RatioGrid, SyncCurve, SynchroConfig, big_psi, detect_episodes, gamma,
                                long_term_metrics, psi_m, sync_curve, synchrogram)

angles = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=80)


def linear_phase(resp_hz, dur, rate=50.0, phase0=0.0, edge_frac=0.0):
    t = np.arange(int(round(dur * rate)) + 1) / rate
    return PhaseSeries(phase0 + 2 * np.pi * resp_hz * t, rate, 0.0, edge_frac)


def gamma_loop(values):
    """Oracle: explicit sum over unit vectors."""
    c = sum(math.cos(v) for v in values) / len(values)
    s = sum(math.sin(v) for v in values) / len(values)
    return c * c + s * s


def curve_loop(beat_phases, grid, half):
    """Reference degree per beat: plain loops over beats, ratios and window members."""
    out, best = [], []
    for k in range(half, len(beat_phases) - half):
        win = [beat_phases[j] for j in range(k - half, k + half + 1) if j != k]
        scores = []
        for n, m in grid.pairs:
            psis = [(2 * math.pi / m) * (((p % (2 * math.pi * m)) / (2 * math.pi) * n) % m) for p in win]
            scores.append(gamma_loop(psis))
        top = max(scores)
        out.append(top)
        best.append(grid.pairs[next(i for i, v in enumerate(scores) if v >= top - 1e-12)])
    return np.array(out), best


# -- psi_m / big_psi -----------------------------------------------------------

def test_psi_m_examples():
    assert psi_m(np.pi, 1) == pytest.approx(0.5)
    assert psi_m(3 * np.pi, 2) == pytest.approx(1.5)


@given(x=st.floats(0, 1), m=st.integers(1, 6), k=st.integers(-5, 5))
def test_psi_m_periodicity(x, m, k):
    phi = x * 2 * np.pi * m
    d = psi_m(phi + k * 2 * np.pi * m, m) - psi_m(phi, m)
    assert min(abs(d), m - abs(d)) < 1e-9


@given(phi=st.floats(-1e4, 1e4), m=st.integers(1, 6))
def test_psi_m_range(phi, m):
    v = psi_m(phi, m)
    assert 0 <= v < m


def test_psi_m_rejects_bad_m():
    with pytest.raises(InvalidConfig):
        psi_m(1.0, 0)


def test_big_psi_examples():
    assert big_psi(0.5, 3, 1) == pytest.approx(np.pi)
    assert big_psi(1.25, 2, 2) == pytest.approx(0.5 * np.pi)
    with pytest.raises(InvalidConfig):
        big_psi(0.5, 0, 1)
    with pytest.raises(InvalidConfig):
        big_psi(0.5, 1, -1)


@pytest.mark.parametrize("n", [2, 3, 4, 7, 15])
def test_big_psi_lattice_collapses(n):
    vals = big_psi(np.arange(3 * n) / n, n, 1)
    wrapped = np.minimum(vals, 2 * np.pi - vals)
    assert np.max(wrapped) < 1e-9


@given(psi=st.floats(0, 5.999), n=st.integers(1, 15), m=st.integers(1, 6))
def test_big_psi_range(psi, n, m):
    v = big_psi(psi % m, n, m)
    assert 0 <= v < 2 * np.pi


@settings(max_examples=60)
@given(phis=st.lists(st.floats(0, 1e3), min_size=2, max_size=60), n=st.integers(1, 9), m=st.integers(1, 4))
def test_reduced_ratio_equivalence(phis, n, m):
    phi = np.array(phis)
    a = gamma(big_psi(psi_m(phi, m), n, m))
    b = gamma(big_psi(psi_m(phi, 2 * m), 2 * n, 2 * m))
    assert a == pytest.approx(b, abs=1e-9)


# -- gamma ---------------------------------------------------------------------

def test_gamma_examples():
    assert gamma(np.full(10, 1.234)) == pytest.approx(1.0)
    assert gamma([0.0, np.pi]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(EmptyResult):
        gamma([1.0])


def test_gamma_random_phase_expectation():
    rng = np.random.default_rng(2024)
    trials = rng.uniform(0, 2 * np.pi, size=(20_000, 50))
    g = np.array([gamma(row) for row in trials[:200]])
    vec = np.cos(trials).mean(1) ** 2 + np.sin(trials).mean(1) ** 2
    assert np.allclose(g, vec[:200])
    assert abs(vec.mean() - 1 / 50) < 0.01


@given(a=angles)
def test_gamma_matches_loop_and_is_bounded(a):
    g = gamma(a)
    assert 0 <= g <= 1
    assert g == pytest.approx(gamma_loop(a), abs=1e-12)


@given(a=angles, c=st.floats(-10, 10))
def test_gamma_rotation_invariant(a, c):
    assert gamma(np.array(a) + c) == pytest.approx(gamma(a), abs=1e-9)


@given(a=angles)
def test_gamma_one_iff_all_equal(a):
    a = np.mod(a, 2 * np.pi)
    distinct = np.ptp(np.angle(np.exp(1j * (a - a[0])))) > 1e-3
    if distinct:
        assert gamma(a) < 1 - 1e-9
    else:
        assert gamma(a) == pytest.approx(1.0, abs=1e-6)


# -- RatioGrid / SynchroConfig -------------------------------------------------

def test_default_grid():
    g = RatioGrid.default()
    assert len(g.pairs) == 14 + 7
    assert all(math.gcd(n, m) == 1 and 1.5 <= n / m <= 15 for n, m in g.pairs)
    assert g.pairs[0] == (2, 1) and g.m_values == (1, 2)
    assert RatioGrid.parse(str(g)) == g


@pytest.mark.parametrize("text", ["4:2", "1:1", "16:1", "3:1,3:1", "x", "3-1"])
def test_grid_rejects(text):
    with pytest.raises(InvalidConfig):
        RatioGrid.parse(text)


def test_synchro_config_validation():
    with pytest.raises(InvalidConfig):
        SynchroConfig(window_beats=50, half_window=20)
    with pytest.raises(InvalidConfig):
        SynchroConfig(gamma_threshold=1.0)
    with pytest.raises(InvalidConfig):
        SynchroConfig(min_episode_s=0)


# -- sync_curve ----------------------------------------------------------------

def test_curve_matches_loop_oracle():
    rng = np.random.default_rng(5)
    beats = np.cumsum(rng.uniform(0.6, 1.0, 140))
    p = linear_phase(0.23, beats[-1] + 1, phase0=0.4)
    grid = RatioGrid.parse("2:1,3:1,4:1,5:2,7:2")
    curve = sync_curve(EventSeries(beats), p, grid, SynchroConfig(20, 10), use_interior=False)
    phases = list(0.4 + 2 * np.pi * 0.23 * beats)
    ref, best = curve_loop(phases, grid, 10)
    assert np.allclose(curve.degree, ref, atol=1e-9)
    assert list(zip(curve.best_n, curve.best_m)) == best
    assert np.allclose(curve.beat_times_s, beats[10:-10])


def test_perfect_four_to_one_lattice():
    resp_hz = 0.25
    beats = (np.arange(240) + 0.5) / (4 * resp_hz)
    p = linear_phase(resp_hz, beats[-1] + 2)
    curve = sync_curve(EventSeries(beats), p)
    assert np.all(curve.degree >= 0.95)
    assert np.all(curve.best_n == 4) and np.all(curve.best_m == 1)


def test_three_to_two_lattice_ties_break_to_simpler_ratio():
    # 3 beats per 2 breaths also collapses the 3:1 synchrogram, so 3:1 and 3:2 tie at 1
    resp_hz = 0.3
    beats = (np.arange(200) + 0.1) / (1.5 * resp_hz)
    p = linear_phase(resp_hz, beats[-1] + 2)
    curve = sync_curve(EventSeries(beats), p)
    assert np.all(curve.degree > 1 - 1e-9)
    assert np.all(curve.best_n == 3) and np.all(curve.best_m == 1)
    only_32 = sync_curve(EventSeries(beats), p, RatioGrid.parse("3:2,5:2"))
    assert np.all(only_32.degree > 1 - 1e-9) and np.all(only_32.best_m == 2)


def test_uncoupled_beats_low_degree():
    golden = (1 + 5 ** 0.5) / 2
    rng = np.random.default_rng(11)
    beats = np.cumsum(1 / 1.2 + rng.normal(0, 0.03, 300))
    p = linear_phase(1.2 / (3 + golden), beats[-1] + 2)
    curve = sync_curve(EventSeries(beats), p)
    assert np.median(curve.degree) < 0.15


def test_too_few_beats():
    beats = np.arange(50) * 0.8 + 1.0
    p = linear_phase(0.25, 45)
    with pytest.raises(InsufficientData):
        sync_curve(EventSeries(beats), p, use_interior=False)
    ok = sync_curve(EventSeries(np.arange(51) * 0.8 + 1.0), p, use_interior=False)
    assert len(ok) == 1


def test_interior_restriction_drops_edge_beats():
    beats = np.arange(0.1, 120, 0.8)
    p = linear_phase(0.25, 120.5, edge_frac=0.05)
    lo, hi = p.interior_span()
    curve = sync_curve(EventSeries(beats), p)
    used = beats[(beats >= lo) & (beats <= hi)]
    assert np.allclose(curve.beat_times_s, used[25:-25])


def test_synchrogram_points():
    beats = EventSeries(np.array([1.0, 2.0, 3.0]))
    t, psi = synchrogram(beats, linear_phase(0.25, 10), m=2)
    assert np.allclose(t, [1, 2, 3])
    assert np.allclose(psi, [0.25, 0.5, 0.75])


# -- episodes ------------------------------------------------------------------

def flat_curve(values, dt=1.0, t0=0.0):
    v = np.asarray(values, dtype=float)
    n = v.size
    return SyncCurve(t0 + dt * np.arange(n), v, np.full(n, 4), np.ones(n, dtype=int))


def test_no_episode_below_threshold():
    assert detect_episodes(flat_curve(np.full(60, 0.05))) == []


def test_single_episode_spans_record():
    eps = detect_episodes(flat_curve(np.full(61, 0.9)))
    assert len(eps) == 1
    e = eps[0]
    assert (e.start_s, e.end_s, e.duration_s) == (0.0, 60.0, 60.0)
    assert (e.dominant_n, e.dominant_m, e.n_beats) == (4, 1, 61)


def test_short_run_is_not_an_episode():
    d = np.full(60, 0.05)
    d[10:14] = 0.5  # 3 s from first to last beat
    assert detect_episodes(flat_curve(d)) == []
    d[10:16] = 0.5  # 5 s
    assert len(detect_episodes(flat_curve(d))) == 1


def test_single_dropout_splits_episode():
    d = np.full(40, 0.5)
    d[20] = 0.1  # threshold is strict
    eps = detect_episodes(flat_curve(d))
    assert [(e.start_s, e.end_s) for e in eps] == [(0.0, 19.0), (21.0, 39.0)]


def test_dominant_ratio_is_mode_with_simple_tiebreak():
    n = np.array([3, 3, 5, 5, 4, 4, 4, 4, 7, 7])
    m = np.array([1, 1, 2, 2, 1, 1, 1, 1, 2, 2])
    c = SyncCurve(np.arange(10.0), np.full(10, 0.5), n, m)
    assert (detect_episodes(c)[0].dominant_n, detect_episodes(c)[0].dominant_m) == (4, 1)
    c2 = SyncCurve(np.arange(10.0), np.full(10, 0.5), np.array([5] * 5 + [3] * 5), np.array([2] * 5 + [1] * 5))
    assert (detect_episodes(c2)[0].dominant_n, detect_episodes(c2)[0].dominant_m) == (3, 1)


@settings(max_examples=80)
@given(vals=st.lists(st.floats(0, 1), min_size=1, max_size=200), dt=st.floats(0.3, 1.5))
def test_episodes_disjoint_ordered_and_valid(vals, dt):
    curve = flat_curve(vals, dt)
    eps = detect_episodes(curve)
    assert detect_episodes(curve) == eps
    for e in eps:
        assert e.duration_s == pytest.approx(e.end_s - e.start_s)
        assert e.duration_s >= 5.0
        inside = (curve.beat_times_s >= e.start_s) & (curve.beat_times_s <= e.end_s)
        assert np.all(curve.degree[inside] > 0.1)
    for a, b in zip(eps, eps[1:]):
        assert a.end_s < b.start_s


# -- long-term metrics ---------------------------------------------------------

def test_min_max_percent():
    c = flat_curve([0.02, 0.31])
    beats = EventSeries(np.arange(0, 60, 0.75))
    m = long_term_metrics(c, [], beats, linear_phase(1 / 3, 60))
    assert m.min_pct == pytest.approx(2.0) and m.max_pct == pytest.approx(31.0)
    assert m.num_sync == 0


def test_freq_ratio_80_over_20():
    beats = EventSeries(np.arange(0, 120, 0.75))
    p = linear_phase(20 / 60, 120)
    m = long_term_metrics(flat_curve([0.5]), [], beats, p)
    assert m.freq_ratio == pytest.approx(4.0, abs=0.1)


def test_metrics_need_nonempty_curve():
    empty = SyncCurve(np.array([]), np.array([]), np.array([]), np.array([]))
    with pytest.raises(InsufficientData):
        long_term_metrics(empty, [], EventSeries(np.arange(5.0)), linear_phase(0.25, 10))
