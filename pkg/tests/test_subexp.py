import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from seqsd.core import ObservationPair
from seqsd.subexp import (SubExpAccumulator, SubExpParams, gamma_exp_mixture, increment, mixing_density,
                          psi_e, subexp_e)


def quad_mixture(s, v, params):
    """Independent oracle: integrate the mixture directly over lambda."""
    c = params.scale_c

    def f(lam):
        return math.exp(lam * s - psi_e(lam, c) * v) * float(mixing_density(lam, params))

    val, _ = integrate.quad(f, 0.0, 1.0 / c, epsabs=0, epsrel=1e-12, limit=500, points=[0.5 / c, 0.9 / c])
    return val


def test_psi_examples():
    assert psi_e(0.0, 1.0) == 0.0
    assert psi_e(0.5, 1.0) == pytest.approx(math.log(2) - 0.5)
    assert round(psi_e(0.5, 1.0), 5) == 0.19315
    assert psi_e(0.3, 1e-6) == pytest.approx(0.045, abs=1e-5)
    with pytest.raises(ValueError):
        psi_e(1.0, 1.0)


def test_subexp_e_examples():
    p = SubExpParams(1.0, 1.0)
    assert subexp_e(0.0, 1.0, ObservationPair(0.3, 0.9, 1), p) == 1.0
    assert subexp_e(0.4, 1.0, ObservationPair(0.3, 0.3, 1), p) <= 1.0
    assert subexp_e(0.5, 1.0, ObservationPair(0.0, 2.0, 1), p) == pytest.approx(math.exp(0.5 - psi_e(0.5, 1)))
    # exp(0.5 - 0.19315) = 1.35914
    assert round(subexp_e(0.5, 1.0, ObservationPair(0.0, 2.0, 1), p), 4) == 1.3591


def test_increment_k3():
    assert increment(ObservationPair(0.0, 2.0, 1), 1.0, 3) == 1.0
    assert increment(ObservationPair(0.5, 2.0, 1), 1.0, 3) == pytest.approx(0.25)


def test_mixing_density_integrates_to_one():
    for p in (SubExpParams(1, 1, 5.0), SubExpParams(0.5, 2.0), SubExpParams(2.0, 0.5, 1.0)):
        val, _ = integrate.quad(lambda l: float(mixing_density(l, p)), 0, 1 / p.scale_c, limit=200)
        assert val == pytest.approx(1.0, rel=1e-9)


def test_empty_process_is_one():
    for p in (SubExpParams(1, 1), SubExpParams(0.3, 2.0, 7.0)):
        assert gamma_exp_mixture(0.0, 0.0, p) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("s,v,rho,c", [(3.0, 2.0, 1.0, 1.0), (40.0, 30.0, 5.0, 0.7), (0.5, 10.0, 100.0, 1.3),
                                       (-2.0, 1.0, 2.0, 1.0), (15.0, 50.0, 0.5, 2.0)])
def test_mixture_matches_quadrature(s, v, rho, c):
    p = SubExpParams(1.0, c, rho)
    assert gamma_exp_mixture(s, v, p, exact=True) == pytest.approx(quad_mixture(s, v, p), rel=1e-8)


def test_negative_branch_conservative():
    p = SubExpParams(1.0, 1.0, 1.0)
    s = -50.0  # B = (s + v + rho) < 0
    assert gamma_exp_mixture(s, 2.0, p) <= 1.0
    assert gamma_exp_mixture(s, 2.0, p, exact=True) <= gamma_exp_mixture(s, 2.0, p)
    assert gamma_exp_mixture(s, 2.0, p, exact=True) == pytest.approx(quad_mixture(s, 2.0, p), rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 100), st.floats(0.1, 200))
def test_monotone_in_s(s1, s2, v, rho):
    p = SubExpParams(1.0, 1.0, rho)
    lo, hi = sorted((s1, s2))
    assert gamma_exp_mixture(lo, v, p, exact=True) <= gamma_exp_mixture(hi, v, p, exact=True) * (1 + 1e-10)


def test_accumulated_sums_equal_product_then_mix():
    rng = np.random.default_rng(2)
    p = SubExpParams(1.0, 1.0, 3.0)
    xs, ys = rng.exponential(size=20) - 1, rng.exponential(size=20) - 1
    acc = SubExpAccumulator.start([0.5])
    for x, y in zip(xs, ys):
        acc = acc.update(x, y, p, 2)
    deltas = [increment(ObservationPair(x, y, 1), 0.5, 2) for x, y in zip(xs, ys)]

    def f(lam):
        prod = np.prod([subexp_e(lam, 0.5, ObservationPair(x, y, 1), p) for x, y in zip(xs, ys)])
        return prod * float(mixing_density(lam, p))

    oracle, _ = integrate.quad(f, 0, 1 - 1e-12, epsrel=1e-11, limit=400)
    assert acc.s[0] == pytest.approx(sum(deltas))
    assert math.exp(acc.log_e_value(p)) == pytest.approx(oracle, rel=1e-7)


@pytest.mark.slow
def test_null_mean_below_one():
    # X, Y iid Exp(1) - 1; increments at |z| <= 1 are sub-exponential with nu = c = 1
    from seqsd.engine import SubExpTest

    rng = np.random.default_rng(20)
    vals = []
    for _ in range(2000):
        t = SubExpTest(SubExpParams(1.0, 1.0), 2)
        x, y = rng.exponential(size=200) - 1, rng.exponential(size=200) - 1
        for a, b in zip(x, y):
            t.update(a, b)
        vals.append(math.exp(t.log_e_value))
    vals = np.array(vals)
    assert vals.mean() <= 1 + 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_params_validation():
    with pytest.raises(ValueError):
        SubExpParams(0.0, 1.0)
    with pytest.raises(ValueError):
        SubExpParams(1.0, 1.0, -2.0)
    assert SubExpParams(0.5, 1.0).rho == pytest.approx(25.0)
