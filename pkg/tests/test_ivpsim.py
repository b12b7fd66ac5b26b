import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from epcag.apkit import TrigPolynomial
from epcag.apsolve import EPCAGProblem, picard_solve
from epcag.errors import ConditionError
from epcag.ivpsim import (
    InitialData,
    best_decay_rate,
    node_map,
    node_map_linear,
    solve_ivp,
    stability_constants,
    stability_experiment,
    uniqueness_check,
)
from epcag.nonlinear import Affine, ProductLogistic, Saturated, ScalarLaw
from epcag.timescale import ThetaSequence

LAMBDA = (1 + math.exp(-1)) / 2


def scalar(c=0.5, g=0.0, p=(0,), a=-1.0):
    return EPCAGProblem(np.array([[a]]), Affine([[[c]]] * len(p), TrigPolynomial([g]), n=1), list(p))


def test_simulate_one_step_closed_form():
    tr = solve_ivp(scalar(), InitialData.constant([1.0], [0]), 3.0)
    assert tr.node_value(1)[0] == pytest.approx(0.5 + 0.5 * math.exp(-1), abs=1e-10)
    assert tr.node_value(3)[0] == pytest.approx(LAMBDA ** 3, abs=1e-10)


def test_simulate_zero_stays_zero():
    tr = solve_ivp(scalar(), InitialData.constant([0.0], [0]), 5.0)
    _, x, _ = tr.sample()
    assert np.all(x == 0.0)


def test_simulate_logistic_closed_form():
    pr = EPCAGProblem(np.array([[1.0]]), ProductLogistic(ScalarLaw("affine", [1.0]), -1.0, 2.0), [0])
    tr = solve_ivp(pr, InitialData.constant([0.5], [0]), 2.0)
    assert tr.node_value(1)[0] == pytest.approx(0.5 * math.exp(0.5), abs=1e-12)


def test_simulate_rejects_advanced():
    with pytest.raises(ValueError):
        solve_ivp(scalar(p=(-1,)), InitialData.constant([1.0], [1]), 2.0)


def test_simulate_requires_full_history():
    with pytest.raises(ValueError):
        solve_ivp(scalar(p=(2,)), InitialData.from_eta([2], [[1.0]], x0=[1.0]), 2.0)


def test_continuity_at_nodes():
    pr = EPCAGProblem(np.array([[-0.5, 1.0], [-1.0, -0.5]]),
                      Saturated([0.3 * np.eye(2), [[0.0, 0.2], [0.1, 0.0]]],
                                TrigPolynomial([0.1, 0.0], [(1.3, [1.0, 0.0], [0.0, 1.0])])), [0, 2])
    tr = solve_ivp(pr, InitialData.constant([1.0, -1.0], [0, 2]), 8.0)
    for i in range(1, 8):
        left = tr(np.array([float(i) - 1e-12]))[0]
        assert np.allclose(left, tr.node_value(i), atol=1e-9)


def test_node_map_multiplier():
    nm = node_map_linear(scalar(), 0)
    M = nm.multiplier()
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(LAMBDA, abs=1e-12)


def test_node_map_pure_forcing():
    pr = EPCAGProblem(np.zeros((1, 1)), Affine([[[0.0]]], TrigPolynomial([0.7]), n=1), [0],
                      theta=ThetaSequence.perturbed(0.2, 1.0))
    for i in range(-3, 4):
        gap = pr.theta.theta(i + 1) - pr.theta.theta(i)
        assert node_map(pr, {i: np.array([2.0])}, i)[0] == pytest.approx(2.0 + 0.7 * gap, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_node_map_agrees_with_simulation(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2)) - 1.5 * np.eye(2)
    f = Affine([0.3 * rng.normal(size=(2, 2)), 0.3 * rng.normal(size=(2, 2))],
               TrigPolynomial(rng.normal(size=2), [(rng.uniform(0.5, 2), rng.normal(size=2), 0.0)]))
    pr = EPCAGProblem(A, f, [0, 2])
    init = InitialData({k: rng.normal(size=2) for k in (-2, -1, 0)})
    tr = solve_ivp(pr, init, 6.0)
    nodes = {k: init.history[k] for k in (-2, -1, 0)}
    for i in range(0, 6):
        nodes[i + 1] = node_map(pr, nodes, i)
        assert np.allclose(nodes[i + 1], tr.node_value(i + 1), atol=1e-8)


def test_uniqueness_examples():
    u = uniqueness_check(scalar())
    assert u.M == pytest.approx(1.0)
    assert u.product == pytest.approx(0.5)
    assert u.passed
    assert uniqueness_check(scalar(c=0.0)).product == 0.0
    rot = EPCAGProblem(np.array([[0.0, 3.0], [-3.0, 0.0]]), Affine([0.4 * np.eye(2)]), [0])
    u = uniqueness_check(rot)
    assert u.M == pytest.approx(1.0, abs=1e-9)
    assert u.product == pytest.approx(0.4, abs=1e-9)
    assert u.passed


def test_stability_constants_examples():
    pr = scalar(c=0.1, g=1.0)
    rep = stability_constants(pr, (1.0, 1.0), a=0.5, delta=0.01)
    zeta = 1 - math.exp(0.5) * 0.1 / 0.5
    assert rep.tau == 1.0
    assert rep.zeta == pytest.approx(zeta, abs=1e-14)
    assert rep.zeta == pytest.approx(0.67026, abs=1e-5)
    assert rep.L == pytest.approx(0.014920, abs=1e-6)
    assert all(rep.flags.values())
    zero = stability_constants(scalar(c=0.0), (1.0, 1.0), a=0.5, delta=0.01)
    assert zero.zeta == 1.0 and zero.L == pytest.approx(0.01)


def test_stability_c7_gate():
    pr = scalar(c=1.5, g=1.0)
    rep = stability_constants(pr, (1.0, 1.0), a=0.5)
    assert not rep.flags["C7"]
    with pytest.raises(ConditionError):
        stability_experiment(pr, None, 0.01, a=0.5, one_sided=(1.0, 1.0))


def test_best_decay_rate_halves_zeta():
    a = best_decay_rate(1.0, 1.0, 0.5, 1, 1.0)
    zeta = lambda x: 1 - math.exp(x) * 0.5 / (1 - x)
    assert zeta(a) == pytest.approx(0.25, abs=1e-10)
    assert best_decay_rate(1.0, 1.0, 1.2, 1, 1.0) is None


def test_stability_experiment_envelope():
    pr = scalar(c=0.1, g=1.0)
    xi, _ = picard_solve(pr, (-5.0, 25.0), tol=1e-10)
    rep = stability_experiment(pr, xi, 0.01, a=0.5, trials=8, one_sided=(1.0, 1.0))
    assert rep.passed
    assert max(rep.trial_margins) <= 1.0
    zero = stability_experiment(pr, xi, 0.0, a=0.5, trials=2, one_sided=(1.0, 1.0))
    assert max(zero.trial_margins) == 0.0


def test_perturbation_integral_identity():
    # difference of two trajectories: d(t) = X(t,0) d(0) + int_0^t X(t,s) C d(theta_{beta(s)-p}) ds
    c, p = 0.3, 1
    pr = scalar(c=c, g=1.0, p=(p,))
    i1 = InitialData({-1: [0.2], 0: [1.0]})
    i2 = InitialData({-1: [0.25], 0: [0.9]})
    t1, t2 = solve_ivp(pr, i1, 3.0), solve_ivp(pr, i2, 3.0)
    d = lambda t: float(t1(np.array([t]))[0, 0] - t2(np.array([t]))[0, 0])
    dn = lambda k: float(t1.node_value(k)[0] - t2.node_value(k)[0])
    for t in (0.5, 1.7, 2.9):
        integral = sum(
            quad(lambda s: math.exp(-(t - s)) * c * dn(k - p), k, min(k + 1, t), epsabs=1e-14)[0]
            for k in range(0, int(math.floor(t)) + 1) if k < t)
        assert d(t) == pytest.approx(math.exp(-t) * dn(0) + integral, abs=1e-9)


def test_tolerance_refinement_converges():
    pr = EPCAGProblem(np.array([[-0.3, 1.0], [-1.0, -0.3]]),
                      Saturated([0.4 * np.eye(2)], TrigPolynomial([0.0, 0.0], [(2.2, [1.0, 0.5], 0.0)])),
                      [1])
    assert uniqueness_check(pr).passed
    init = InitialData.constant([1.0, 0.0], [1])
    ref = solve_ivp(pr, init, 10.0, rtol=1e-12)
    t = np.linspace(0, 10, 401)
    diffs = [float(np.max(np.abs(solve_ivp(pr, init, 10.0, rtol=r)(t) - ref(t))))
             for r in (1e-4, 1e-7, 1e-10)]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-8
