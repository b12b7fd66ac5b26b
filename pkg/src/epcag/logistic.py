"""Scalar logistic equation with piecewise constant arguments.

    x'(t) = x(t) [a(t) - h(x([t - p_1]), ..., x([t - p_m]))]

with ``a > 0`` almost periodic on average, ``h(0) = 0`` and ``h >= 0`` on the
positive orthant.  Bounded solutions in ``Psi = {0 <= psi <= H}`` are fixed
points of the anti-causal operator

    (Pi psi)(t) = int_t^inf exp(int_s^t a) psi(s) h(psi(theta_{beta(s)-p})) ds,

evaluated as the ``P = 0`` bounded-solution operator of ``x' = a x + F``
with ``F = -psi h``: the Green kernel is ``-exp(int_s^t a)`` for ``t < s`` and
the two minus signs cancel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize

from .apkit import TrigPolynomial
from .errors import ConvergenceError, NoEnvelopeError, NonContractiveError
from .grid import GridSolution, build_cells
from .lindich import BoundedOperator, DichotomyData
from .nonlinear import ProductLogistic, ScalarLaw
from .timescale import ThetaSequence, beta

__all__ = [
    "LogisticProblem",
    "mean_value",
    "kernel_bounds",
    "mu_sup",
    "existence_conditions",
    "logistic_fixed_point",
    "simulate_logistic",
    "as_epcag",
]


class LogisticProblem:
    """``x' = x [a(t) - h(x(theta_{beta(t)-p_1}), ...)]`` on the box ``[0, H]``."""

    def __init__(self, a: TrigPolynomial, law: ScalarLaw, deviations, H=1.0,
                 theta: ThetaSequence | None = None):
        if not isinstance(a, TrigPolynomial):
            a = TrigPolynomial(np.asarray(a, dtype=float))
        if a.shape != ():
            raise ValueError("a(t) must be scalar")
        self.a = a
        self.law = law
        self.deviations = [int(p) for p in deviations]
        if min(self.deviations) < 0:
            raise ValueError("deviations must be non-negative")
        if law.m != len(self.deviations):
            raise ValueError("law arity does not match the number of deviations")
        if not H > 0:
            raise ValueError("H must be positive")
        self.H = float(H)
        self.theta = theta if theta is not None else ThetaSequence.uniform(1.0)
        self.a_min_sampled = float(np.min(a(np.linspace(-200.0, 200.0, 40001))))
        if abs(float(law(np.zeros(law.m)))) > 0:
            raise ValueError("h(0) must vanish")
        self.h_nonnegative = bool(np.min(_box_grid_values(law, self.H, 9)) >= 0)

    @property
    def m(self):
        return len(self.deviations)

    @property
    def l(self):
        """Lipschitz constant of ``h`` on ``[0, H]^m``."""
        return self.law.lipschitz(self.H)

    @classmethod
    def from_dict(cls, d):
        h = d["f"]
        devs = d.get("deviations", [0])
        law = ScalarLaw(h["kind"], h["c"], m=h.get("m", len(devs)))
        theta = ThetaSequence.from_descriptor(d["theta"]) if "theta" in d else None
        return cls(TrigPolynomial.from_descriptor(d["a"]), law, devs, d.get("H", 1.0), theta)

    def to_dict(self):
        return {"a": self.a.to_descriptor(), "f": self.law.to_descriptor(),
                "deviations": self.deviations, "H": self.H}


def _box_grid_values(law, H, k):
    axes = [np.linspace(0.0, H, k)] * law.m
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(law.m, -1).T
    return law(pts)


def as_epcag(problem: LogisticProblem):
    """The same equation as a catalog problem (``A = a``, ``f = -x h``) for forward simulation."""
    from .apsolve import EPCAGProblem

    f = ProductLogistic(problem.law, scale=-1.0, H=problem.H)
    A = TrigPolynomial(problem.a.const.reshape(1, 1),
                       [(w, c.reshape(1, 1), s.reshape(1, 1))
                        for w, c, s in zip(problem.a.omegas, problem.a.cos, problem.a.sin)])
    dich = DichotomyData(np.zeros((1, 1)), 0.0, 1.0, 1.0, 1.0, source="unused")
    return EPCAGProblem(A, f, problem.deviations, problem.theta, dich)


# ---------------------------------------------------------------------------
# bounds


def mean_value(a: TrigPolynomial, T=None):
    """Bohr mean of ``a``.

    With ``T=None`` the exact constant term is returned.  Otherwise the window
    average ``(1/2T) int_{-T}^{T} a`` is computed by adaptive quadrature and
    returned with the estimate ``sum_k |amplitude_k| / (omega_k T)`` of its
    distance from the mean.
    """
    if T is None:
        return float(a.mean_value())
    T = float(T)
    pieces = np.linspace(-T, T, int(math.ceil(2 * T)) + 1)
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        total += integrate.quad(lambda u: float(a(u)), lo, hi, epsabs=1e-13, epsrel=1e-13)[0]
    est = sum(math.hypot(c, s) / (w * T) for w, c, s in zip(a.omegas, a.cos, a.sin) if w > 0)
    return total / (2.0 * T), float(est)


def _certified_min(a: TrigPolynomial, t_lo=-200.0, t_hi=200.0, h=0.01):
    cert = a.lower_bound()
    t = np.arange(t_lo, t_hi + h, h)
    sampled = float(np.min(a(t)))
    if abs(sampled - cert) <= 1e-6:
        return cert
    # at an interior minimum a' = 0, so grid values overshoot by at most sup|a''| h^2 / 8
    curv = sum(w * w * math.hypot(c, s) for w, c, s in zip(a.omegas, a.cos, a.sin))
    return max(cert, sampled - curv * h * h / 8.0)


def kernel_bounds(a: TrigPolynomial, t_span=30.0, d_max=60.0, h=0.05):
    """``(K, sigma)`` with ``exp(int_s^t a) <= K exp(sigma (t - s))`` for ``t <= s``.

    When ``a_min > 0`` the answer is ``(1, a_min)``.  Otherwise ``sigma`` in
    ``(0, M(a)]`` is chosen to minimise ``K / sigma`` (the quantity entering
    the existence conditions) with ``K`` the sampled sup over a grid of
    ``(t, s)`` pairs plus the grid-spacing slack.
    """
    M = mean_value(a)
    if M <= 0:
        raise NoEnvelopeError("mean value of a(t) is not positive")
    a_min = _certified_min(a)
    if a_min > 0:
        return 1.0, float(a_min)
    t = np.arange(-t_span, t_span + h, h)
    d = np.arange(0.0, d_max + h, h)
    At = a.antiderivative(t)
    I = a.antiderivative(t[:, None] + d[None, :]) - At[:, None]  # int_t^{t+d} a
    # worst case per separation: smallest integral over the window of a
    Imin = I.min(axis=0)
    a_sup = a.sup_bound()

    def logK(sigma):
        slack = (2.0 * a_sup + sigma) * h / 2.0
        return float(np.max(sigma * d - Imin)) + slack

    def objective(sigma):
        return logK(sigma) - math.log(sigma)

    grid = np.linspace(M / 200.0, M, 200)
    vals = np.array([objective(s) for s in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(objective, bounds=(lo, hi), method="bounded")
    sigma = float(res.x) if res.fun < vals[i] else float(grid[i])
    return float(math.exp(logK(sigma))), sigma


def mu_sup(law: ScalarLaw, H, method="corners", k=41):
    """``sup z_0 h(z_1, ..., z_m)`` over ``[0, H]^{m+1}``.

    The catalog laws are monotone in every argument on the box, so the sup of
    ``h`` sits at a corner and ``mu = H max(sup h, 0)``.  ``method="grid"``
    searches a ``k``-point tensor grid instead.
    """
    if method == "corners":
        hs = float(np.max(_box_grid_values(law, H, 2)))
    elif method == "grid":
        hs = float(np.max(_box_grid_values(law, H, k)))
    else:
        raise ValueError(f"unknown method {method!r}")
    z0 = np.linspace(0.0, H, 2 if method == "corners" else k)
    return float(np.max(z0 * hs))


@dataclass
class ExistenceReport:
    mean: float
    K: float
    sigma: float
    mu: float
    l: float
    H: float
    bound: float
    contraction: float
    bound_ok: bool
    contraction_ok: bool

    @property
    def passed(self):
        return self.bound_ok and self.contraction_ok

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def existence_conditions(problem: LogisticProblem, K=None, sigma=None, mu=None):
    """``K mu / sigma <= H`` and ``(K / sigma)(l H + mu) < 1``."""
    if K is None or sigma is None:
        K, sigma = kernel_bounds(problem.a)
    if mu is None:
        mu = mu_sup(problem.law, problem.H)
    l, H = problem.l, problem.H
    bound = K * mu / sigma
    contraction = K / sigma * (l * H + mu)
    return ExistenceReport(mean_value(problem.a), K, sigma, mu, l, H, bound, contraction,
                           bool(bound <= H), bool(contraction < 1.0))


# ---------------------------------------------------------------------------
# fixed point of the backward operator


class _BackwardOperator:
    def __init__(self, problem: LogisticProblem, core, t_cut, K, sigma):
        self.problem = problem
        seq = problem.theta
        pmax = max(problem.deviations)
        i_lo = int(beta(seq, core[0])) - pmax - 1
        i_hi = int(beta(seq, core[1] + t_cut)) + 1
        self.cells = build_cells(seq, i_lo, i_hi)
        self.i_lo = i_lo
        A = TrigPolynomial(problem.a.const.reshape(1, 1),
                           [(w, c.reshape(1, 1), s.reshape(1, 1))
                            for w, c, s in zip(problem.a.omegas, problem.a.cos, problem.a.sin)])
        self.dich = DichotomyData(np.zeros((1, 1)), 0.0, 1.0, K, sigma, source="kernel_bounds")
        self.op = BoundedOperator(A, self.dich, self.cells)
        n_nodes = self.cells.node_edges.size
        intervals = np.arange(i_lo, i_hi)
        self.arg_pos = np.clip(
            intervals[:, None] - np.array(problem.deviations)[None, :] - i_lo, 0, n_nodes - 1)
        self.core = tuple(core)

    def apply(self, psi: GridSolution):
        nodes = psi.node_values[:, 0]
        h = self.problem.law(nodes[self.arg_pos])  # per switching interval
        hk = h[self.cells.interval - self.i_lo]

        def forcing(k, s):
            return -psi(s) * hk[k]

        edges, dense = self.op.apply(forcing)
        return GridSolution(self.cells, edges, dense, self.core)

    def constant(self, value):
        C, R = self.cells.count, 17
        return GridSolution(self.cells, np.full((C + 1, 1), value), np.full((C, R, 1), value),
                            self.core)


def _clamp(psi: GridSolution, H):
    return GridSolution(psi.cells, np.clip(psi.edge_values, 0.0, H), np.clip(psi.dense, 0.0, H),
                        psi.core, psi.meta)


def _diff(u: GridSolution, v: GridSolution):
    return float(max(np.max(np.abs(u.dense - v.dense)), np.max(np.abs(u.edge_values - v.edge_values))))


@dataclass
class LogisticRun:
    start: float
    iterations: int
    updates: list
    ratios: list
    sup_norms: list
    monotone: bool
    final_sup: float
    defect: float

    def to_dict(self):
        return asdict(self)


@dataclass
class LogisticReport:
    conditions: dict
    runs: list
    t_cut: float
    zero_solution: bool
    starts_agree: bool
    max_ratio: float
    window: tuple
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def logistic_fixed_point(problem: LogisticProblem, core=(0.0, 20.0), tol=1e-10, starts=None,
                         max_iter=200, require_conditions=True):
    """Picard iteration of the truncated backward operator inside ``Psi = [0, H]``.

    Iterates from ``psi_0 = 0`` and from ``psi_0 = H`` (clamping into ``Psi``
    after each step).  Returns the solution from the ``H`` start (or the last
    start given) and a report carrying both runs, the measured ratios and the
    zero-solution flag, which is raised when the converged sup norm on the
    core is below ``10 tol``.
    """
    from .apsolve import propagated_cut

    cond = existence_conditions(problem)
    if require_conditions and not cond.passed:
        raise NonContractiveError(
            f"existence conditions fail: K mu/sigma = {cond.bound:.4g}, "
            f"(K/sigma)(lH + mu) = {cond.contraction:.4g}")
    K, sigma = cond.K, cond.sigma
    dich = DichotomyData(np.zeros((1, 1)), 0.0, 1.0, K, sigma)
    F_sup = max(cond.mu, 1e-300)
    eff_l = problem.l * problem.H + cond.mu
    shift = (max(problem.deviations) + 1) * 1.0
    try:
        t_cut = propagated_cut(dich, eff_l, 1, shift, F_sup, tol / 10.0)
    except Exception:
        t_cut = dich.cut_for(F_sup, tol / 10.0)
    t_cut = float(max(t_cut, dich.cut_for(F_sup, tol / 10.0)))
    op = _BackwardOperator(problem, core, t_cut, K, sigma)
    starts = [0.0, problem.H] if starts is None else list(starts)
    runs, sols = [], []
    for start in starts:
        psi = op.constant(start)
        updates, ratios, sups = [], [], []
        monotone = True
        for it in range(1, max_iter + 1):
            new = _clamp(op.apply(psi), problem.H)
            upd = _diff(new, psi)
            if np.any(new.dense > psi.dense + 1e-12) or np.any(new.edge_values > psi.edge_values + 1e-12):
                monotone = False
            if updates and updates[-1] > 1e3 * tol:
                ratios.append(upd / updates[-1])
            updates.append(upd)
            sups.append(new.sup_norm())
            psi = new
            if upd < tol:
                break
        else:
            raise ConvergenceError(f"no convergence from start {start} in {max_iter} iterations")
        defect = _diff(_clamp(op.apply(psi), problem.H), psi)
        runs.append(LogisticRun(float(start), it, updates, ratios, sups, monotone,
                                psi.sup_norm(), defect))
        sols.append(psi)
    agree = all(abs(r.final_sup - runs[0].final_sup) < 10 * tol for r in runs)
    zero = any(r.final_sup < 10 * tol for r in runs)
    max_ratio = max((max(r.ratios) for r in runs if r.ratios), default=0.0)
    report = LogisticReport(cond.to_dict(), [r.to_dict() for r in runs], t_cut, zero, agree,
                            max_ratio, sols[-1].window)
    sol = sols[-1]
    sol.meta.update({"zero_solution": zero, "t_cut": t_cut})
    return sol, report


def simulate_logistic(problem: LogisticProblem, N0, t_end, rtol=1e-10):
    """Forward method-of-steps simulation; ``N0`` is a positive scalar (constant history) or a dict."""
    from .ivpsim import InitialData, solve_ivp

    if isinstance(N0, dict):
        init = InitialData(N0)
    else:
        if not N0 > 0:
            raise ValueError("initial value must be positive")
        init = InitialData.constant([float(N0)], problem.deviations)
    for v in init.history.values():
        if not np.all(v > 0):
            raise ValueError("initial values must be positive")
    return solve_ivp(as_epcag(problem), init, t_end, rtol)
