import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqsd import affirm
from seqsd.affirm import (DEFAULT_C_TABLE, BandSpec, KSBandTest, MinEProcessState, MinEProcessTest,
                          TvCSAffirmTest, affirm_sd_via_min, ks_statistic, lil_bands, lil_width,
                          min_eprocess_update, support_thresholds, tvcs_affirm_test)
from seqsd.core import state_from_history
from seqsd.engine import DominanceTest
from seqsd.weighting import WeightScheme, init_thresholds


def test_min_examples():
    s = MinEProcessState.start([0.0, 1.0, 2.0])
    s, e = min_eprocess_update(s, [2.0, 3.0, 1.5])
    assert e == pytest.approx(1.5)
    s = MinEProcessState.start([0.0, 1.0])
    _, e = min_eprocess_update(s, [1.7, 1.7])
    assert e == pytest.approx(1.7)


def test_single_threshold_reduces_to_fsd_test():
    rng = np.random.default_rng(4)
    xs = rng.choice([0.0, 1.0], 300, p=[0.6, 0.4])
    ys = rng.choice([0.0, 1.0], 300, p=[0.3, 0.7])
    m = MinEProcessTest([0.0, 1.0])
    grid = init_thresholds("finite-support", support=[0.0])
    d = DominanceTest(bettor="gro", weights=WeightScheme("uniform"), adaptive=False, initial_grid=grid)
    for x, y in zip(xs, ys):
        m.update(x, y)
        d.update(x, y)
        assert m.min_state.log_e == pytest.approx(d.log_e_value, abs=1e-9)


def test_min_below_each_threshold_process():
    rng = np.random.default_rng(9)
    support = [0.0, 1.0, 2.0, 3.0]
    m = MinEProcessTest(support)
    for _ in range(200):
        m.update(float(rng.integers(0, 4)), float(rng.integers(0, 4)))
        assert m.min_state.log_e <= m.min_state.log_wealth.min() + 1e-15
        assert np.all(m.min_state.log_e <= m.min_state.log_wealth)


def test_continuous_support_rejected():
    with pytest.raises(ValueError, match="finite support"):
        MinEProcessTest([0.0, 1.0], continuous=True)
    with pytest.raises(ValueError):
        MinEProcessTest([0.0, 1.0]).update(0.5, 0.0)


def test_support_thresholds_drop_top():
    np.testing.assert_array_equal(support_thresholds([2, 0, 1]), [0, 1])


def test_min_affirms_separated_example():
    rng = np.random.default_rng(1)
    xs = rng.choice([0.0, 1.0, 2.0], 2000, p=[0.5, 0.3, 0.2])
    ys = rng.choice([0.0, 1.0, 2.0], 2000, p=[0.25, 0.3, 0.45])
    assert affirm_sd_via_min(xs, ys, [0.0, 1.0, 2.0])


# bands ------------------------------------------------------------------------


def test_width_at_t_min():
    b = BandSpec(0.05)
    assert lil_width(1, b) == pytest.approx(b.A * math.sqrt(b.C))
    b3 = BandSpec(0.05, t_min=3)
    assert lil_width(3, b3) == pytest.approx(b3.A * math.sqrt(b3.C / 3))


def test_width_shrinks():
    b = BandSpec(0.05)
    for t in np.unique(np.logspace(0, 6, 200).astype(int)):
        assert lil_width(4 * t, b) < lil_width(t, b)


def test_default_constant_and_validation():
    assert BandSpec(0.05).A == 0.85
    assert BandSpec(0.05).C == DEFAULT_C_TABLE[0.05]
    with pytest.raises(ValueError):
        BandSpec(0.05, C=-1.0)
    with pytest.raises(ValueError):
        BandSpec(1.5)


@pytest.mark.parametrize("alpha", sorted(DEFAULT_C_TABLE))
def test_table_constants_are_certified(alpha):
    A, C = affirm.DEFAULT_A, DEFAULT_C_TABLE[alpha]
    ratios = 1.0 + np.linspace(0.08, 0.2, 13) * (2 * A * A - 1.0)
    best = min(affirm._total_crossing_bound(A, C, r, 200) for r in ratios)
    assert best <= alpha / 2


def test_mgf_closed_form_matches_quadrature():
    from scipy import integrate

    for theta in (0.1, 1.0, 5.0, 20.0):
        f = lambda s: theta * math.exp(theta * s + min(0.0, math.log(2) - 2 * s * s))
        head, _ = integrate.quad(f, 0, affirm._S0)
        tail, _ = integrate.quad(f, affirm._S0, np.inf, limit=200, epsrel=1e-12)
        val = head + tail
        assert math.exp(affirm._log_mgf_bound(theta)) == pytest.approx(1 + val, rel=1e-9)


def test_ks_statistic_on_pooled_points_matches_fine_grid():
    rng = np.random.default_rng(12)
    xs, ys = rng.uniform(0, 1, 40), rng.uniform(0.1, 1.1, 40)
    s = state_from_history(xs, ys)
    z = np.linspace(-0.1, 1.2, 100_000)
    fine = max(0.0, float(np.max(s.ecdf_x(z) - s.ecdf_y(z))))
    assert ks_statistic(s) == pytest.approx(fine)


def test_ks_deterministic_separation():
    b = BandSpec(0.05)
    t = KSBandTest(b)
    for n in range(1, 400):
        t.update(0.0, 1.0)
        if 2 * lil_width(n, b) < 1:
            assert t.rejected
            break
    assert t.rejected
    assert t.rejection_time == min(n for n in range(1, 400) if 2 * lil_width(n, b) < 1)


def test_ks_identical_streams_never_reject():
    t = KSBandTest(BandSpec(0.05))
    rng = np.random.default_rng(0)
    for v in rng.normal(size=500):
        assert not t.update(v, v)


def test_tvcs_examples():
    lcb = lambda z: np.full(np.shape(z), 0.6)
    assert tvcs_affirm_test(lcb, lambda z: lcb(z) - 0.1, [0.0, 1.0, 2.0])
    assert not tvcs_affirm_test(lcb, lambda z: np.where(np.asarray(z) == 1.0, 0.6, 0.5), [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        tvcs_affirm_test(lcb, lcb, [])


def test_tvcs_exhaustive_small_cases():
    lattice = (0.0, 0.25, 0.5, 0.75, 1.0)
    for m in (1, 2, 3):
        z = np.arange(m, dtype=float)
        for lo in itertools.product(lattice, repeat=m):
            for hi in itertools.product(lattice, repeat=m):
                lo_a, hi_a = np.array(lo), np.array(hi)
                got = tvcs_affirm_test(lambda q: lo_a[q.astype(int)], lambda q: hi_a[q.astype(int)], z)
                assert got == all(h < l for h, l in zip(hi, lo))
                if np.any(hi_a == lo_a):
                    assert not got


unit = st.floats(0, 1)


@given(st.lists(st.tuples(unit, unit, unit, unit), min_size=1, max_size=6))
def test_tvcs_monotone_in_tightness(rows):
    lo = np.array([r[0] for r in rows])
    hi = np.array([r[1] for r in rows])
    # tighter: lower band moves up, upper band moves down
    lo_t = np.minimum(1, lo + np.array([r[2] for r in rows]) * (1 - lo))
    hi_t = hi * (1 - np.array([r[3] for r in rows]))
    idx = lambda a: (lambda q: a[q.astype(int)])
    z = np.arange(len(rows), dtype=float)
    if tvcs_affirm_test(idx(lo), idx(hi), z):
        assert tvcs_affirm_test(idx(lo_t), idx(hi_t), z)


def test_lil_bands_clip():
    s = state_from_history([0.0, 0.0], [1.0, 1.0])
    lcb, ucb = lil_bands(s, BandSpec(0.05))
    assert lcb(0.5) == 0.0 and ucb(0.5) == pytest.approx(min(1.0, lil_width(2, BandSpec(0.05))))


def test_tvcs_sticky_and_affirms():
    t = TvCSAffirmTest(BandSpec(0.05), [0.5])
    history = [t.update(0.0, 1.0) for _ in range(300)]
    assert history[-1]
    first = history.index(True)
    assert all(history[first:])


@pytest.mark.slow
def test_band_coverage_monte_carlo():
    # one-sided deviation of a uniform ECDF; each side is budgeted alpha/2
    b = BandSpec(0.05)
    rng = np.random.default_rng(3)
    T, reps = 2000, 300
    widths = np.array([lil_width(t, b) for t in range(1, T + 1)])
    hits = 0
    for _ in range(reps):
        u = rng.random(T)
        sorted_u = np.empty(0)
        for t in range(1, T + 1):
            sorted_u = np.insert(sorted_u, np.searchsorted(sorted_u, u[t - 1]), u[t - 1])
            if np.max(np.arange(1, t + 1) / t - sorted_u) > widths[t - 1]:
                hits += 1
                break
    p = 0.025
    assert hits / reps <= p + 3 * math.sqrt(p * (1 - p) / reps)
