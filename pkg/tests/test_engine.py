import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqsd.core import EmpiricalState, ObservationPair, ingest, state_from_history
from seqsd.engine import VARIANTS, BatchTest, DominanceTest, SubExpTest, make_test
from seqsd.fsd import plugin_lambda_vec
from seqsd.orders import OrderSpec, payoff_vec, posterior_mean, up_candidates, up_recompute_for_threshold
from seqsd.subexp import SubExpParams
from seqsd.weighting import WeightScheme, init_thresholds


def stream(n, seed=0, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, n), rng.uniform(lo, hi, n)


def test_gro_uniform_matches_manual():
    xs, ys = stream(120, 1)
    grid = init_thresholds(lo=0.1, hi=0.9, count=5)
    test = DominanceTest(bettor="gro", weights=WeightScheme("uniform"), adaptive=False, initial_grid=grid)
    z = grid.thresholds
    logw = 0.0
    for t, (x, y) in enumerate(zip(xs, ys)):
        hx, hy = xs[:t], ys[:t]
        n_p = ((hx[:, None] <= z) & (hy[:, None] > z)).sum(0)
        n_q = ((hy[:, None] <= z) & (hx[:, None] > z)).sum(0)
        lam = plugin_lambda_vec(n_p, n_q)
        d = (x <= z).astype(float) - (y <= z).astype(float)
        logw += math.log(np.mean(1 + lam * d))
        test.update(x, y)
        assert test.log_e_value == pytest.approx(logw, abs=1e-10)


def test_up_fsd_shortcut_matches_replay():
    xs, ys = stream(80, 2)
    grid = init_thresholds(lo=0.2, hi=0.8, count=4)
    test = DominanceTest(bettor="up", weights=WeightScheme("uniform"), adaptive=False, initial_grid=grid)
    for t, (x, y) in enumerate(zip(xs, ys)):
        test.update(x, y)
        bets = test.last_plan.bets
        for j, z in enumerate(grid.thresholds):
            s = up_recompute_for_threshold(xs[:t], ys[:t], OrderSpec.fsd(), z)
            assert bets[j] == pytest.approx(float(posterior_mean(s.lams, s.log_weights)), abs=1e-12)


def test_general_order_sums_match_replay():
    xs, ys = stream(260, 3)
    order = OrderSpec.ksd(2, 0.0)
    test = DominanceTest(order, bettor="up", weights=WeightScheme("exp"), adaptive=True)
    for x, y in zip(xs, ys):
        test.update(x, y)
    z = test._z
    D = np.stack([payoff_vec(order, z, x, y) for x, y in zip(xs, ys)], axis=1)
    np.testing.assert_allclose(test._sum_d, D.sum(1), atol=1e-9)
    for j in range(0, z.size, 17):
        s = up_recompute_for_threshold(xs, ys, order, z[j])
        np.testing.assert_allclose(test._up_rows[j], s.log_weights - s.log_prior, atol=1e-9)


def test_refresh_schedule_is_geometric():
    xs, ys = stream(420, 4)
    test = DominanceTest(OrderSpec.icx(1.0), bettor="up", adaptive=True)
    seen = []
    prev = test._z
    for t, (x, y) in enumerate(zip(xs, ys)):
        test.update(x, y)
        if test._z is not prev:
            seen.append(t)
            prev = test._z
    assert seen == [50, 100, 200, 400]


@pytest.mark.parametrize("variant", ["adagro-exp", "adagro-hedge", "adagro-linear", "gro", "constant", "up"])
def test_predictability_audit(variant):
    """Round-t bets and weights ignore the round-t pair."""
    xs, ys = stream(90, 5)
    for t in (1, 2, 30, 50, 51, 89):
        plans = []
        for x_t, y_t in ((xs[t - 1], ys[t - 1]), (0.99, 0.01), (0.01, 0.99)):
            test = make_test(variant)
            for x, y in zip(xs[: t - 1], ys[: t - 1]):
                test.update(x, y)
            test.update(x_t, y_t)
            plans.append(test.last_plan)
        for p in plans[1:]:
            np.testing.assert_array_equal(p.thresholds, plans[0].thresholds)
            np.testing.assert_array_equal(p.bets, plans[0].bets)
            np.testing.assert_array_equal(p.weights, plans[0].weights)


def test_predictability_audit_general_order():
    xs, ys = stream(120, 6)
    order = OrderSpec.ksd(3, 0.0)
    for t in (10, 51, 101):
        plans = []
        for pert in (None, (0.9, 0.05), (0.05, 0.9)):
            test = DominanceTest(order, bettor="up")
            for x, y in zip(xs[: t - 1], ys[: t - 1]):
                test.update(x, y)
            test.update(*(pert or (xs[t - 1], ys[t - 1])))
            plans.append(test.last_plan)
        for p in plans[1:]:
            np.testing.assert_array_equal(p.bets, plans[0].bets)
            np.testing.assert_array_equal(p.weights, plans[0].weights)


def test_shared_state_equals_own_state():
    xs, ys = stream(100, 7)
    a, b = make_test("adagro-exp"), make_test("adagro-exp")
    state = EmpiricalState()
    for t, (x, y) in enumerate(zip(xs, ys), 1):
        a.update(x, y)
        b.step(state, x, y)
        state = ingest(state, ObservationPair(x, y, t))
        assert a.log_e_value == b.log_e_value


def test_replay_determinism():
    xs, ys = stream(150, 8)
    runs = []
    for _ in range(2):
        t = make_test("up", OrderSpec.ksd(2, 0.0), keep_history=True)
        for x, y in zip(xs, ys):
            t.update(x, y)
        runs.append(t.ep.history)
    assert runs[0] == runs[1]


def test_laplace_grid_is_fixed():
    rng = np.random.default_rng(9)
    test = make_test("up", OrderSpec.laplace())
    for _ in range(120):
        test.update(rng.exponential(), rng.exponential())
    assert not test.adaptive
    np.testing.assert_array_equal(test.last_plan.thresholds, [0.0, 1e-2, 1e-1, 1.0, 1e2, 1e3])


def test_empty_grid_is_neutral():
    test = DominanceTest(OrderSpec.ksd(2, 5.0), bettor="up", adaptive=False)
    test.update(6.0, 7.0)
    assert test.log_e_value == 0.0 and test.active_threshold_count == 0


def test_support_violation_raised():
    test = make_test("up", OrderSpec.ksd(2, 0.0))
    with pytest.raises(ValueError, match="lower bound"):
        test.update(-0.1, 0.5)


def test_make_test_compatibility():
    with pytest.raises(ValueError):
        make_test("gro", OrderSpec.ksd(2, 0.0))
    with pytest.raises(ValueError):
        make_test("subexp", OrderSpec.fsd())
    with pytest.raises(ValueError):
        make_test("subexp", OrderSpec.ksd(4, 0.0))
    with pytest.raises(ValueError):
        make_test("adagro-exp", weights="hedge")
    with pytest.raises(ValueError):
        make_test("nope")
    assert isinstance(make_test("subexp", OrderSpec.ksd(2, 0.0)), SubExpTest)
    for v in VARIANTS[:-1]:
        assert isinstance(make_test(v), DominanceTest)


def test_constant_variant_on_anticorr():
    # every round pays +1 at z=0 and z=1/3... check against the closed form
    test = make_test("constant", initial_grid=init_thresholds("finite-support", support=[0, 1 / 3, 2 / 3, 1]))
    test.update(0.0, 1.0)
    # payoffs at z = 0, 1/3, 2/3, 1: +1, +1, +1, 0
    assert test.log_e_value == pytest.approx(math.log(np.mean([1.1, 1.1, 1.1, 1.0])))
    test.update(2 / 3, 1 / 3)
    # payoffs: 0, -1, 0, 0
    assert test.log_e_value == pytest.approx(math.log(1.075) + math.log(np.mean([1, 0.9, 1, 1])))


def test_subexp_engine_matches_accumulator():
    from seqsd.subexp import SubExpAccumulator

    p = SubExpParams(1.0, 1.0)
    test = SubExpTest(p, 2)
    acc = SubExpAccumulator.start([-1.0, -0.5, 0.0, 0.5, 1.0])
    rng = np.random.default_rng(10)
    for x, y in rng.exponential(size=(50, 2)) - 1:
        test.update(x, y)
        acc = acc.update(x, y, p, 2)
    assert test.log_e_value == pytest.approx(acc.log_e_value(p), abs=1e-12)


def test_batch_identical_batches_neutral():
    test = BatchTest(init_thresholds(), constant_lambda=0.5)
    for _ in range(5):
        b = np.random.default_rng(1).uniform(size=7)
        assert test.update(b, b) == pytest.approx(1.0)


def test_batch_detects_shift():
    rng = np.random.default_rng(11)
    test = BatchTest(init_thresholds())
    for _ in range(300):
        test.update(rng.uniform(0, 0.8, 10), rng.uniform(0.2, 1.0, 12))
    assert test.rejected


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=80),
       st.sampled_from(["adagro-exp", "adagro-hedge", "adagro-linear", "gro", "up"]))
def test_factor_floor(pairs, variant):
    test = make_test(variant, burn_in=10)
    for x, y in pairs:
        assert test.update(x, y) >= 0.01 - 1e-12
