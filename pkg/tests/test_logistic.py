import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from epcag.apkit import TrigPolynomial
from epcag.errors import NoEnvelopeError
from epcag.logistic import (
    LogisticProblem,
    _BackwardOperator,
    existence_conditions,
    kernel_bounds,
    logistic_fixed_point,
    mean_value,
    mu_sup,
    simulate_logistic,
)
from epcag.nonlinear import ScalarLaw

SQ2 = math.sqrt(2)


def a_sin(c=3.0):
    return TrigPolynomial(c, [(1.0, 0.0, 1.0)])


def example(H=1.0):
    return LogisticProblem(a_sin(), ScalarLaw("affine", [0.05]), [0], H)


def test_mean_value_exact():
    assert mean_value(a_sin()) == 3.0
    assert mean_value(TrigPolynomial(2.0, [(1.0, 1.0, 0.0), (SQ2, 1.0, 0.0)])) == 2.0


@pytest.mark.parametrize("a", [a_sin(), TrigPolynomial(2.0, [(1.0, 1.0, 0.0), (SQ2, 1.0, 0.0)])])
def test_mean_value_numeric(a):
    val, est = mean_value(a, T=1000.0)
    exact = mean_value(a)
    assert abs(val - exact) < 0.01
    assert abs(val - exact) <= est
    # independent quadrature of the window average
    ref = quad(lambda u: float(a(u)), -1000, 1000, limit=5000)[0] / 2000
    assert val == pytest.approx(ref, abs=1e-6)


def test_kernel_bounds_examples():
    assert kernel_bounds(a_sin()) == pytest.approx((1.0, 2.0), abs=1e-9)
    assert kernel_bounds(TrigPolynomial(0.7)) == (1.0, 0.7)
    K, s = kernel_bounds(TrigPolynomial(0.5, [(1.0, 1.0, 0.0)]))
    assert K > 1 and 0 < s < 0.5


def test_kernel_bounds_requires_positive_mean():
    with pytest.raises(NoEnvelopeError):
        kernel_bounds(TrigPolynomial(-0.1, [(1.0, 1.0, 0.0)]))


def test_kernel_envelope_post_hoc():
    a = TrigPolynomial(0.5, [(1.0, 1.0, 0.0), (SQ2, 0.0, 0.3)])
    K, s = kernel_bounds(a)
    rng = np.random.default_rng(11)
    t = rng.uniform(-500, 500, 1000)
    d = rng.uniform(0, 80, 1000)
    lhs = -(a.antiderivative(t + d) - a.antiderivative(t))  # int_s^t a with s = t + d
    assert np.all(lhs <= math.log(K) - s * d + 1e-12)


def test_mu_examples():
    assert mu_sup(ScalarLaw("affine", [0.05]), 1.0) == pytest.approx(0.05)
    assert mu_sup(ScalarLaw("monomial", 0.1, m=2), 1.0) == pytest.approx(0.1)
    # 2 * 0.2 * tanh(2) evaluates to 0.385611...
    expected = 2 * 0.2 * math.tanh(2)
    law = ScalarLaw("saturated", [0.2])
    assert mu_sup(law, 2.0) == pytest.approx(expected, abs=1e-12)
    assert mu_sup(law, 2.0, method="grid") == pytest.approx(expected, abs=1e-12)


def test_existence_example():
    c = existence_conditions(example())
    assert c.mean == 3.0
    assert (c.K, c.sigma, c.mu) == pytest.approx((1.0, 2.0, 0.05))
    assert c.bound == pytest.approx(0.025)
    assert c.contraction == pytest.approx(0.05)
    assert c.passed


def test_existence_trivial_and_small_box():
    zero = LogisticProblem(a_sin(), ScalarLaw("affine", [0.0]), [0], 1.0)
    c = existence_conditions(zero)
    assert c.bound == 0.0 and c.contraction == 0.0 and c.passed
    # with mu held fixed, shrinking H breaks K mu / sigma <= H
    c = existence_conditions(example(H=0.001), mu=0.05)
    assert not c.bound_ok


def test_backward_kernel_sign_against_quadrature():
    pr = example()
    op = _BackwardOperator(pr, (0.0, 5.0), 15.0, 1.0, 2.0)
    psi = op.constant(0.5)
    out = op.apply(psi)
    a = pr.a
    for t in (0.3, 2.0, 4.5):
        # int_t^inf exp(int_s^t a) psi(s) h(psi) ds
        ref = sum(quad(lambda s: math.exp(-float(a.integral(t, s))) * 0.5 * 0.025, lo, lo + 1,
                       epsabs=1e-15)[0] for lo in np.arange(t, t + 15.0, 1.0))
        assert float(out(np.array([t]))[0, 0]) == pytest.approx(ref, abs=1e-10)


def test_fixed_point_suite():
    sol, rep = logistic_fixed_point(example(), core=(0.0, 10.0), tol=1e-10)
    assert rep.zero_solution
    zero_run, h_run = rep.runs
    assert zero_run["iterations"] == 1 and zero_run["final_sup"] == 0.0
    assert h_run["monotone"]
    sups = h_run["sup_norms"]
    assert all(b <= a + 1e-15 for a, b in zip(sups, sups[1:]))
    assert rep.max_ratio <= 0.05 + 0.02
    assert h_run["defect"] < 2e-10
    _, vals, _ = sol.sample()
    assert vals.min() >= 0 and vals.max() <= 1.0


def test_simulate_examples():
    eq = LogisticProblem(TrigPolynomial(1.0), ScalarLaw("affine", [1.0]), [0], 2.0)
    one = simulate_logistic(eq, 1.0, 5.0)
    _, x, _ = one.sample(core_only=False)
    assert np.allclose(x, 1.0, atol=1e-12)
    half = simulate_logistic(eq, 0.5, 2.0)
    assert half.node_value(1)[0] == pytest.approx(0.5 * math.exp(0.5), abs=1e-12)
    assert half.node_value(1)[0] == pytest.approx(0.8243606, abs=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 5.0), st.floats(0.0, 3.0))
def test_simulate_positive(N0, c):
    pr = LogisticProblem(TrigPolynomial(0.5, [(1.0, 1.0, 0.0)]), ScalarLaw("affine", [c, 0.5]),
                         [0, 2], 10.0)
    tr = simulate_logistic(pr, N0, 15.0)
    _, x, _ = tr.sample(core_only=False)
    assert np.all(x > 0)


def test_problem_validation():
    with pytest.raises(ValueError):
        LogisticProblem(a_sin(), ScalarLaw("affine", [0.05]), [-1], 1.0)
    with pytest.raises(ValueError):
        LogisticProblem(a_sin(), ScalarLaw("affine", [0.05]), [0], 0.0)
