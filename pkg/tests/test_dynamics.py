import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wiprates import rng as streams
from wiprates.dynamics import (
    AffineRoof,
    DoublingMap,
    FlowState,
    InducedLsvMap,
    LsvMap,
    doubling_step,
    induced_step,
    lsv_left_inverse,
    lsv_step,
    make_system,
    return_times,
    sample_initial_arrays,
    sample_initial_states,
    suspension_evolve,
)
from wiprates.errors import InputError, TruncationError


@pytest.mark.parametrize(
    "x, beta, expected",
    [(0.75, 0.1, 0.5), (0.75, 0.45, 0.5), (0.0, 0.5, 0.0), (0.25, 0.5, 0.25 * (1 + math.sqrt(2) * 0.5))],
)
def test_lsv_step_values(x, beta, expected):
    assert lsv_step(x, beta) == pytest.approx(expected, abs=1e-15)


def test_lsv_half_goes_right():
    assert lsv_step(0.5, 0.3) == 0.0


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (0.3, 0.6), (0.7, 0.4)])
def test_doubling_step_values(x, expected):
    assert doubling_step(x) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("bad", [-0.1, 1.1, np.nan])
def test_domain_errors(bad):
    with pytest.raises(InputError):
        lsv_step(bad, 0.2)
    with pytest.raises(InputError):
        doubling_step(bad)


@pytest.mark.parametrize("beta", [0.1, 0.25, 0.45])
def test_lsv_branches_monotone_and_in_range(beta):
    x = np.linspace(0.0, 0.5, 2001, endpoint=False)
    left = lsv_step(x, beta)
    assert np.all(np.diff(left) > 0)
    assert left.min() >= 0 and left.max() <= 1
    right = lsv_step(np.linspace(0.5, 1.0, 101), beta)
    assert right.min() >= 0 and right.max() <= 1


@given(st.floats(0.0, 1.0, exclude_max=True), st.floats(0.05, 0.49))
def test_left_inverse_round_trip(z, beta):
    x = lsv_left_inverse(z, beta)
    assert 0.0 <= x <= 0.5
    assert lsv_step(x, beta) == pytest.approx(z, abs=1e-12)


@pytest.mark.parametrize("y, expected", [(0.75, (0.5, 1)), (0.9, (0.8, 1))])
def test_induced_step_examples(y, expected):
    fy, r = induced_step(y, 0.5)
    assert fy == pytest.approx(expected[0], abs=1e-15)
    assert r == expected[1]


def test_induced_step_long_return_near_half():
    fy, r = induced_step(0.5 + 1e-6, 0.5)
    assert r >= 2
    assert 0.5 <= fy <= 1.0


def test_induced_step_cap():
    with pytest.raises(TruncationError):
        induced_step(0.5 + 1e-9, 0.45, cap=10)


def test_induced_map_covers_y():
    g = streams.stream(11)
    y = 0.5 + 0.5 * g.random(20000)
    fy, r = InducedLsvMap(0.3).step(y)
    assert np.all((fy >= 0.5) & (fy <= 1.0))
    assert np.all(r >= 1)


def test_induced_branches_partition():
    F = InducedLsvMap(0.25)
    br = F.branches(50)
    assert br[0].lo == 0.75 and br[0].hi == 1.0
    for a, b in zip(br, br[1:]):
        assert b.hi == pytest.approx(a.lo, abs=1e-15)
        assert b.return_time == a.return_time + 1
    mid = np.array([0.5 * (b.lo + b.hi) for b in br[:20]])
    assert np.array_equal(return_times(0.25, mid), np.arange(1, 21))


# c frozen from the exact branch-endpoint tail 2 (x_k / 2) times 1.25, k in 8..64
@pytest.mark.parametrize("beta, c", [(0.3, 25.0), (0.35, 10.0), (0.45, 3.0)])
def test_return_time_tail(beta, c):
    g = streams.stream(5, int(beta * 100))
    r = return_times(beta, 0.5 + 0.5 * g.random(200_000))
    ks = np.array([8, 16, 32])
    freq = np.array([(r > k).mean() for k in ks])
    assert np.all(freq <= c * ks ** (-1 / beta + 0.2))
    assert np.all(np.diff(freq) < 0)


def test_return_time_tail_matches_branches():
    beta = 0.35
    r = return_times(beta, 0.5 + 0.5 * streams.stream(9).random(200_000))
    br = InducedLsvMap(beta).branches(20)
    for k in (2, 4, 8):
        exact = 2 * (br[k].hi - 0.5)
        assert abs((r > k).mean() - exact) < 4 * math.sqrt(exact / 200_000)


def test_doubling_orbit_does_not_collapse():
    orb = DoublingMap().orbit(np.array([0.3]), 200, streams.stream(1))
    assert orb[0, 0] == 0.3
    assert np.mean(orb[0, 100:]) > 0.1
    assert orb[0, 1] == pytest.approx(0.6, abs=2**-50)


def test_lsv_orbit_matches_step():
    m = LsvMap(0.3)
    orb = m.orbit(np.array([0.123, 0.8]), 20)
    assert np.allclose(orb[:, 1:], lsv_step(orb[:, :-1], 0.3), rtol=0, atol=0)


# -- suspension -----------------------------------------------------------------------


DYADIC = make_system("doubling")


def test_evolve_zero_time():
    s = FlowState(0.3, 0.0)
    assert suspension_evolve(s, 0.0, DYADIC) == s


def test_evolve_no_crossing():
    out = suspension_evolve(FlowState(0.3, 0.2), 0.5, DYADIC)
    assert out.y == 0.3 and out.u == pytest.approx(0.7)


def test_evolve_one_crossing():
    out = suspension_evolve(FlowState(0.3, 0.8), 0.5, DYADIC)
    assert out.y == pytest.approx(0.6) and out.u == pytest.approx(0.3)


def test_evolve_rejects_bad_state():
    with pytest.raises(InputError):
        suspension_evolve(FlowState(0.3, 1.5), 0.1, DYADIC)
    with pytest.raises(InputError):
        suspension_evolve(FlowState(0.3, 0.1), -1.0, DYADIC)


@settings(max_examples=200)
@given(
    st.integers(0, 2**20 - 1),
    st.integers(0, 2**10 - 1),
    st.integers(0, 10 * 2**10),
    st.integers(0, 10 * 2**10),
    st.sampled_from(["constant", "affine"]),
)
def test_semigroup_law_exact(yk, uk, t1k, t2k, roof):
    # dyadic inputs keep every addition and doubling exact in floating point
    system = make_system("doubling", roof=roof)
    y = yk / 2**20
    u = uk / 2**10 * float(system.roof(y))
    u = min(u, float(system.roof(y)) - 2**-30)
    s = FlowState(y, u)
    t1, t2 = t1k / 2**10, t2k / 2**10
    once = suspension_evolve(s, t1 + t2, system)
    twice = suspension_evolve(suspension_evolve(s, t1, system), t2, system)
    assert once == twice


# -- initial states -------------------------------------------------------------------


def test_constant_roof_states():
    states = sample_initial_states(DYADIC, 3, 0, streams.stream(2))
    assert len(states) == 3
    assert all(0 <= s.u < 1 and 0 <= s.y < 1 for s in states)


def test_doubling_states_uniform_ks():
    N = 4000
    y, u = sample_initial_arrays(DYADIC, N, 100, streams.stream(4))
    ys = np.sort(y)
    ks = np.max(np.maximum(np.arange(1, N + 1) / N - ys, ys - np.arange(N) / N))
    assert ks < 3 / math.sqrt(N)
    us = np.sort(u)
    assert np.max(np.abs(np.arange(1, N + 1) / N - us)) < 3 / math.sqrt(N)


def test_lsv_histogram_increases_toward_zero():
    y, _ = sample_initial_arrays(make_system("lsv", 0.25), 20000, 1000, streams.stream(6))
    hist, _ = np.histogram(y, bins=5, range=(0, 0.5))
    assert np.all(np.diff(hist) < 0)
    assert (y < 0.5).mean() > 0.55


def test_affine_roof_heights_inside_roof():
    system = make_system("lsv", 0.2, "affine")
    y, u = sample_initial_arrays(system, 500, 10, streams.stream(8))
    assert np.all(u < AffineRoof()(y)) and np.all(u >= 0)


def test_per_row_generators_reproducible():
    a = sample_initial_arrays(DYADIC, 5, 10, streams.streams(5, 3))
    b = sample_initial_arrays(DYADIC, 5, 10, streams.streams(5, 3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_sampling_requires_generator():
    with pytest.raises(InputError):
        sample_initial_arrays(DYADIC, 3, 0, None)
