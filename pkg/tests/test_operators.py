import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hysterlab import _kernels
from hysterlab.operators import (
    clamp,
    ds_init,
    ds_output,
    ds_step,
    nds_init,
    nds_step,
    play_step,
    relay_init,
    relay_step,
    slip_update,
    soundness,
    stop_init,
    stop_step,
)
from hysterlab.refmodels import loop_area

finite = st.floats(-10, 10, allow_nan=False)


def run_stop(r, xs):
    st_ = stop_init(r, xs[0])
    out = [st_.y]
    for v in xs[1:]:
        st_ = stop_step(st_, v)
        out.append(st_.y)
    return np.array(out)


def run_ds(r, beta, xs):
    s = ds_init(r, beta, xs[0])
    out = [ds_output(s)]
    for v in xs[1:]:
        s, y = ds_step(s, v)
        out.append(y)
    return np.array(out), s


def run_nds(w_x, beta, xs, bias=0.0):
    s = nds_init(w_x, 0.0, bias, beta, xs[0])
    out = [ds_output(s.ds)]
    for v in xs[1:]:
        s, y = nds_step(s, v)
        out.append(y)
    return np.array(out)


def refine(xs, k=2):
    """Insert k-1 evenly spaced samples between consecutive samples; originals sit at multiples of k."""
    xs = np.asarray(xs, dtype=float)
    parts = [xs[:1]]
    for a, b in zip(xs[:-1], xs[1:]):
        parts.append(a + (b - a) * np.arange(1, k + 1) / k)
    return np.concatenate(parts)


def triangle_cycles(amplitude, cycles, per_quarter=10):
    up = np.linspace(0, amplitude, per_quarter + 1)
    one = np.r_[up, up[::-1][1:], -up[1:], -up[::-1][1:]]
    return np.r_[np.tile(one[:-1], cycles), 0.0]


# --- stop -------------------------------------------------------------------------


@pytest.mark.parametrize("r, x0, y", [(1.0, 0.0, 0.0), (1.0, 2.0, 1.0), (0.5, -3.0, -0.5)])
def test_stop_init(r, x0, y):
    s = stop_init(r, x0)
    assert s.y == y
    assert s.x_prev == x0


@pytest.mark.parametrize("r", [0.0, -1.0])
def test_stop_rejects_bad_threshold(r):
    with pytest.raises(ValueError):
        stop_init(r, 0.0)


def test_stop_rejects_non_finite():
    s = stop_init(1.0, 0.0)
    for bad in (math.nan, math.inf):
        with pytest.raises(ValueError):
            stop_step(s, bad)


def test_stop_examples():
    assert run_stop(1.0, [0.0, 1.5])[-1] == 1.0
    assert run_stop(1.0, [0.0, 1.5, -0.5])[-1] == -1.0
    assert run_stop(1.0, [0.0, 0.3, 0.5])[-1] == run_stop(1.0, [0.0, 0.5])[-1] == 0.5


def test_play_examples():
    s = stop_init(1.0, 0.0)
    s, p = play_step(s, 1.5)
    assert p == 0.5
    s = stop_init(1.0, 0.0)
    for v in (0.2, 0.5, 0.9):
        s, p = play_step(s, v)
        assert p == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=2, max_size=200), st.floats(0.05, 5))
def test_stop_bounded_and_play_identity(xs, r):
    s = stop_init(r, xs[0])
    for v in xs[1:]:
        s, p = play_step(s, v)
        assert abs(s.y) <= r
        assert abs(p + s.y - v) <= 1e-12 * max(1.0, abs(v))


def test_play_identity_on_1000_steps():
    rng = np.random.default_rng(7)
    xs = np.cumsum(rng.normal(0, 0.4, 1000))
    s = stop_init(0.7, xs[0])
    for v in xs[1:]:
        s, p = play_step(s, v)
        assert abs(p + s.y - v) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(finite, finite, st.floats(0.05, 5), st.integers(1, 20))
def test_stop_semigroup_on_monotone_segment(x0, x1, r, k):
    start = stop_init(r, 0.0)
    start = stop_step(start, x0)
    one = stop_step(start, x1)
    s = start
    for v in np.linspace(x0, x1, k + 1)[1:]:
        s = stop_step(s, v)
    assert abs(s.y - one.y) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0, 1), finite, st.floats(0.05, 3))
def test_stop_wiping_out(a, b, lam, c, r):
    a_prime = b + lam * (a - b)
    full = run_stop(r, [0.0, a, b, a_prime, b, c])
    short = run_stop(r, [0.0, a, b, c])
    assert abs(full[-1] - short[-1]) <= 1e-12
    # the minor branch returns to its emanation point
    assert abs(full[4] - full[2]) <= 1e-12


def test_stop_kernel_matches_scalar():
    rng = np.random.default_rng(1)
    xs = np.cumsum(rng.normal(0, 0.3, 300))
    r = np.array([0.1, 0.5, 2.0])
    out = np.empty((xs.size, r.size))
    _kernels.stop_sequence(xs, r, out)
    for j, rj in enumerate(r):
        np.testing.assert_array_equal(out[:, j], run_stop(rj, xs))


# --- relay -------------------------------------------------------------------------


@pytest.mark.parametrize("s, r, x0, sign", [(0.5, 0.2, 0.0, -1), (-0.5, 0.2, 0.0, 1), (0.5, 0.2, 1.0, 1)])
def test_relay_init(s, r, x0, sign):
    assert relay_init(s, r, x0).sign == sign


def test_relay_switching():
    st_ = relay_init(0.5, 0.2, 0.0)
    assert relay_step(st_, 0.71).sign == 1
    up = relay_step(st_, 0.8)
    assert relay_step(up, 0.5).sign == 1
    assert relay_step(up, 0.3).sign == -1
    with pytest.raises(ValueError):
        relay_init(0.0, 0.0, 0.0)


def test_relay_against_two_state_automaton():
    rng = np.random.default_rng(2)
    xs = rng.uniform(-1.5, 1.5, 10_000)
    alpha, beta = -0.3, 0.4
    st_ = relay_init(0.05, 0.35, xs[0])
    state = 1 if xs[0] >= beta else (-1 if xs[0] <= alpha else -1)
    assert st_.sign == state
    for v in xs[1:]:
        st_ = relay_step(st_, v)
        if state == -1 and v >= beta:
            state = 1
        elif state == 1 and v <= alpha:
            state = -1
        assert st_.sign == state


def test_relay_kernel_matches_scalar():
    rng = np.random.default_rng(4)
    xs = rng.uniform(-1, 1, 500)
    s = np.array([-0.4, 0.0, 0.3])
    r = np.array([0.1, 0.2, 0.5])
    out = np.empty((xs.size, 3))
    _kernels.relay_sequence(xs, s - r, s + r, np.where(s > 0, -1.0, 1.0), out)
    for j in range(3):
        st_ = relay_init(s[j], r[j], xs[0])
        ref = [st_.sign]
        for v in xs[1:]:
            st_ = relay_step(st_, v)
            ref.append(st_.sign)
        np.testing.assert_array_equal(out[:, j], ref)


# --- slip and soundness ---------------------------------------------------------------


def test_slip_examples():
    assert slip_update(0.3, 0.2, 0.2) == 0.3
    _, s = run_ds(1.0, 1e7, [0.0, 2.0])
    assert s.s == 1.0
    # 0 -> 2 -> -2 -> 2 with r = 1: play goes 0, 1, -1, 1
    _, s = run_ds(1.0, 1e7, [0.0, 2.0, -2.0, 2.0])
    assert s.s == 5.0


def test_soundness_examples():
    assert soundness(0.0, 1.0, 3.0) == 1.0
    assert soundness(1.5, 1.0, 3.0) == 0.5
    assert soundness(6.0, 1.0, 3.0) == 0.0
    assert soundness(3.0, 1.0, 3.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(0.01, 10), st.floats(0.01, 1e8))
def test_soundness_in_unit_interval(s, r, beta):
    assert 0.0 <= soundness(s, r, beta) <= 1.0


def test_ds_rejects_bad_beta():
    with pytest.raises(ValueError):
        ds_init(1.0, 0.0, 0.0)


# --- deteriorating stop ------------------------------------------------------------------


def test_ds_large_beta_equals_stop():
    xs = triangle_cycles(1.5, 3)
    y, _ = run_ds(1.0, 1e7, xs)
    ref = run_stop(1.0, xs)
    assert np.max(np.abs(y - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def test_ds_unsaturated_is_identity():
    xs = 0.9 * np.sin(np.linspace(0, 6 * np.pi, 200))
    y, s = run_ds(1.0, 2.0, xs)
    np.testing.assert_allclose(y, xs, rtol=0, atol=1e-15)
    assert soundness(s.s, 1.0, 2.0) == pytest.approx(1.0, abs=1e-14)


def test_ds_peaks_decrease_to_zero():
    xs = triangle_cycles(2.0, 12)
    y, _ = run_ds(1.0, 25.0, xs)
    per = (xs.size - 1) // 12
    peaks = [y[k * per : (k + 1) * per].max() for k in range(12)]
    positive = [p for p in peaks if p > 0]
    assert all(a > b for a, b in zip(positive, positive[1:]))
    assert peaks[-1] == 0.0
    assert len(positive) < 12


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=2, max_size=150), st.floats(0.1, 3), st.floats(0.1, 100))
def test_ds_slip_and_soundness_monotone(xs, r, beta):
    s = ds_init(r, beta, xs[0])
    prev_s, prev_bl = s.s, soundness(s.s, r, beta)
    for v in xs[1:]:
        s, y = ds_step(s, v)
        bl = soundness(s.s, r, beta)
        assert s.s >= prev_s
        assert bl <= prev_bl
        if prev_bl == 0.0:
            assert y == 0.0
        prev_s, prev_bl = s.s, bl


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=2, max_size=60), st.floats(0.1, 3), st.floats(0.5, 100), st.integers(2, 5))
def test_ds_refinement_invariance(xs, r, beta, k):
    y, _ = run_ds(r, beta, xs)
    yk, _ = run_ds(r, beta, refine(xs, k))
    np.testing.assert_allclose(yk[::k], y, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0, 1), finite, st.floats(0.05, 3), st.floats(0.1, 1e7))
def test_ds_wiping_out_without_slip(a, b, lam, c, r, beta):
    # a minor loop narrower than 2r stays elastic, so it leaves no slip behind
    a_prime = b + lam * (a - b)
    assume(abs(a_prime - b) <= 2 * r)
    full, _ = run_ds(r, beta, [0.0, a, b, a_prime, b, c])
    short, _ = run_ds(r, beta, [0.0, a, b, c])
    assert abs(full[-1] - short[-1]) <= 1e-12


def test_ds_wide_minor_loop_accrues_slip():
    # beyond 2r the minor loop slips and the deterioration is remembered
    _, full = run_ds(1.0, 10.0, [0.0, 5.0, -5.0, 3.0, -5.0, 0.0])
    _, short = run_ds(1.0, 10.0, [0.0, 5.0, -5.0, 0.0])
    assert full.s > short.s


def _cycle_areas(x, y, cycles):
    per = (x.size - 1) // cycles
    return [loop_area(x[k * per : (k + 1) * per + 1], y[k * per : (k + 1) * per + 1]) for k in range(cycles)]


def test_ds_congruency_dichotomy():
    xs = triangle_cycles(2.0, 3)
    y_inf, _ = run_ds(1.0, 1e7, xs)
    per = (xs.size - 1) // 3
    assert np.max(np.abs(y_inf[per : 2 * per] - y_inf[2 * per : 3 * per])) <= 1e-6
    y25, _ = run_ds(1.0, 25.0, xs)
    a = _cycle_areas(xs, y25, 3)
    assert abs(a[2] - a[1]) / abs(a[1]) > 0.01


def test_ds_kernel_matches_scalar():
    rng = np.random.default_rng(9)
    xs = np.cumsum(rng.normal(0, 0.5, 400))
    r = np.array([0.3, 1.0, 2.0])
    beta = np.array([5.0, 40.0, 1e7])
    out = np.empty((xs.size, 3))
    _kernels.ds_sequence(np.repeat(xs[:, None], 3, axis=1), r, beta, out)
    for j in range(3):
        np.testing.assert_allclose(out[:, j], run_ds(r[j], beta[j], xs)[0], rtol=0, atol=1e-14)


# --- NDS ------------------------------------------------------------------------------------


def test_nds_threshold_is_unit():
    s = nds_init(2.0, 0.5, 0.1, 3.0, 0.2, 1.0)
    assert s.ds.stop.r == 1.0
    assert s.ds.stop.x_prev == pytest.approx(2.0 * 0.2 + 0.5 * 1.0 + 0.1)


def test_nds_static_symmetric_congruent_loops():
    xs = triangle_cycles(1.0, 3, per_quarter=25)
    y = run_nds(1.42, 1e7, xs)
    per = (xs.size - 1) // 3
    c2, c3 = y[per : 2 * per + 1], y[2 * per : 3 * per + 1]
    assert np.max(np.abs(c2 - c3)) <= 1e-6
    # half a period later the input is mirrored and so is the output
    half = per // 2
    np.testing.assert_allclose(c2[: half + 1], -c2[half:], atol=1e-6)
    assert loop_area(xs[per : 2 * per + 1], c2) > 0.1


def test_nds_unit_weight_in_range_is_identity():
    xs = triangle_cycles(1.0, 2)
    np.testing.assert_array_equal(run_nds(1.0, 1e7, xs), xs)


def test_nds_refinement_invariance():
    rng = np.random.default_rng(12)
    xs = rng.uniform(-1, 1, 80)
    y = run_nds(1.42, 1e7, xs)
    y2 = run_nds(1.42, 1e7, refine(xs, 2))
    np.testing.assert_allclose(y2[::2], y, rtol=0, atol=1e-12)


def test_nds_rate_term():
    s = nds_init(0.0, 2.0, 0.0, 1e7, 0.0, 0.0)
    s, y = nds_step(s, 0.0, 0.25)
    assert y == pytest.approx(0.5)


def test_clamp():
    assert clamp(3.0, 1.0) == 1.0
    assert clamp(-3.0, 1.0) == -1.0
    assert clamp(0.25, 1.0) == 0.25
