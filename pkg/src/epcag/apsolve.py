"""Bounded (almost periodic) solutions of the quasilinear system.

Solves ``x' = A(t) x + f(t, x(theta_{beta(t)-p_1}), ..., x(theta_{beta(t)-p_m}))``
on the whole line through the integral equation ``x = int G(t, s) F(x)(s) ds``.

``F`` reads ``x`` only at switching nodes, so the fixed-point iteration is
run on the vector of node values; the dense solution is reconstructed once
the nodes have converged.  The line is truncated to a window enlarged by
``T_cut + (max|p_j| + 1) * max gap`` around the requested core, and accuracy
is claimed on the core only.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .apkit import TrigPolynomial
from .errors import ConvergenceError, NonContractiveError, TruncationBudgetError, WindowExhaustedError
from .grid import GridSolution, build_cells, cheb_points
from .lindich import (
    BoundedOperator,
    DichotomyData,
    as_matrix_poly,
    contraction_margin,
    estimate_dichotomy,
    spectral_dichotomy,
)
from .nonlinear import Nonlinearity, ProductLogistic, nonlinearity_from_descriptor, secant_check
from .timescale import ThetaSequence, beta, gap_stats

__all__ = [
    "EPCAGProblem",
    "SolveReport",
    "f_theta_eval",
    "apply_Pi",
    "picard_solve",
    "residual",
    "ap_diagnostic",
    "APDiagnostic",
]


class EPCAGProblem:
    """``x' = A(t) x + f(t, x(theta_{beta(t)-p_1}), ...)`` with its dichotomy data.

    Parameters
    ----------
    A : array_like or TrigPolynomial
        Linear part (n-by-n).
    f : Nonlinearity
        Catalog nonlinearity with certified Lipschitz constant ``f.lipschitz``.
    deviations : list of int
        ``p_1, ..., p_m``; mixed signs are allowed here.
    theta : ThetaSequence, optional
        Switching sequence, ``theta_i = i`` by default.
    dichotomy : DichotomyData, optional
        Computed on first use when omitted (spectral for constant ``A``,
        grid estimate otherwise).
    """

    def __init__(self, A, f: Nonlinearity, deviations, theta: ThetaSequence | None = None,
                 dichotomy: DichotomyData | None = None, estimation_grid=(-20.0, 20.0, 0.25),
                 descriptor=None):
        self.A = as_matrix_poly(A)
        self.n = self.A.shape[0]
        self.f = f
        self.deviations = [int(p) for p in deviations]
        if not self.deviations:
            raise ValueError("at least one deviation is required")
        if f.m != len(self.deviations):
            raise ValueError("nonlinearity arity does not match the number of deviations")
        if f.n != self.n:
            raise ValueError("nonlinearity dimension does not match A")
        self.theta = theta if theta is not None else ThetaSequence.uniform(1.0)
        self._dichotomy = dichotomy
        self.estimation_grid = estimation_grid
        self.descriptor = descriptor

    @property
    def m(self):
        return len(self.deviations)

    @property
    def l(self):
        return self.f.lipschitz

    @property
    def p_max(self):
        return max(abs(p) for p in self.deviations)

    @property
    def dichotomy(self) -> DichotomyData:
        if self._dichotomy is None:
            if self.A.is_constant:
                self._dichotomy = spectral_dichotomy(self.A)
            else:
                self._dichotomy = estimate_dichotomy(self.A, self.estimation_grid)
        return self._dichotomy

    @property
    def margin(self):
        return contraction_margin(self.dichotomy, self.l, self.m)

    def max_gap(self, t_lo=-50.0, t_hi=50.0):
        idx = self.theta.indices_between(t_lo, t_hi)
        return gap_stats(self.theta, (int(idx[0]) - 1, int(idx[-1]) + 1)).max_gap

    def lipschitz_spot_check(self, rng=0, samples=2000):
        """Observed secant ratio; must not exceed ``l``."""
        return secant_check(self.f, rng, samples)

    @classmethod
    def from_dict(cls, d):
        """Build from a problem-file dictionary (already schema-validated)."""
        A = TrigPolynomial.from_descriptor(d["A"])
        A = as_matrix_poly(A)
        n = A.shape[0]
        devs = list(d["deviations"])
        f = nonlinearity_from_descriptor(d["f"], n, len(devs))
        theta = ThetaSequence.from_descriptor(d.get("theta", {"kind": "uniform", "gap": 1.0}))
        dich = DichotomyData.from_dict(d["dichotomy"], n) if d.get("dichotomy") else None
        grid = tuple(d.get("estimation_grid", (-20.0, 20.0, 0.25)))
        return cls(A, f, devs, theta, dich, grid, descriptor=d)


@dataclass
class SolveReport:
    iterations: int
    margin: float
    ratios: list
    final_update: float
    residual: float
    tail_bound: float
    t_cut: float
    window: tuple
    core: tuple
    updates: list = field(default_factory=list)
    fixed_point_defect: float = float("nan")
    converged: bool = True

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        d["core"] = list(self.core)
        return d


# ---------------------------------------------------------------------------
# F_theta


def _node_args(problem: EPCAGProblem, psi: GridSolution, idx, clamp):
    """Array (len(idx), m, n) of ``psi(theta_{i - p_j})``."""
    out = np.empty((len(idx), problem.m, problem.n))
    for a, i in enumerate(idx):
        for j, p in enumerate(problem.deviations):
            out[a, j] = psi.node_value(int(i) - p, clamp=clamp)
    return out


def f_theta_eval(problem: EPCAGProblem, psi: GridSolution, t):
    """``f(t, psi(theta_{beta(t)-p_1}), ..., psi(theta_{beta(t)-p_m}))`` (vectorised over ``t``).

    Raises :class:`WindowExhaustedError` when a deviated node falls outside
    the window of ``psi``.
    """
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.atleast_1d(beta(problem.theta, tt))
    z = _node_args(problem, psi, idx, clamp=False)
    if problem.f.uses_state:
        out = problem.f(tt, z, psi(tt))
    else:
        out = problem.f(tt, z)
    return out[0] if np.ndim(t) == 0 else out


# ---------------------------------------------------------------------------
# the integral operator on a fixed window


class _NodeOperator:
    """Truncated operator ``Pi`` on a window, acting on node vectors.

    On cell ``k`` (inside switching interval ``i``) the forcing is
    ``h(z_i) + g(s)`` with ``z_i`` the frozen node arguments, so the cell
    integral is ``D_k h(z_i) + e_k`` with precomputed ``D_k`` and ``e_k``.
    """

    def __init__(self, problem: EPCAGProblem, i_lo, i_hi, max_cell=1.0):
        if isinstance(problem.f, ProductLogistic) or not problem.f.separable:
            raise TypeError("apsolve handles affine and saturated nonlinearities; "
                            "use the logistic module for the product form")
        self.problem = problem
        self.cells = build_cells(problem.theta, i_lo, i_hi, max_cell)
        self.op = BoundedOperator(problem.A, problem.dichotomy, self.cells)
        cache = self.op.cache
        n = problem.n
        self.D = cache.kernel_sum()
        g = problem.f.g
        Fg = g(cache.quad_nodes.ravel()).reshape(cache.cells, cache.quad_order, n)
        self.e = cache.kernel_apply(Fg)
        self.node_edges = self.cells.node_edges
        n_nodes = self.node_edges.size
        self.i_lo = i_lo
        self.n_nodes = n_nodes
        # frozen-argument node positions per interval, clamped into the window
        intervals = np.arange(i_lo, i_hi)
        self.arg_pos = np.clip(
            intervals[:, None] - np.array(problem.deviations)[None, :] - i_lo, 0, n_nodes - 1)
        self.cell_interval = self.cells.interval - i_lo

    def frozen(self, nodes):
        """``h(z_i)`` for every switching interval of the window."""
        z = nodes[self.arg_pos]  # (intervals, m, n)
        return self.problem.f.node_term(z)

    def edges(self, nodes):
        c = self.frozen(nodes)[self.cell_interval]
        w = np.einsum("kij,kj->ki", self.D, c) + self.e
        return self.op.solve_edges(w)

    def step(self, nodes):
        return self.edges(nodes)[self.node_edges]

    def solution(self, nodes, core, meta=None):
        edges = self.edges(nodes)
        c = self.frozen(nodes)[self.cell_interval]
        g = self.problem.f.g

        def forcing(k, s):
            return c[k][None, :] + g(s)

        dense = self.op.cache.dense(edges, forcing)
        return GridSolution(self.cells, edges, dense, tuple(core), dict(meta or {}))

    def forcing_sup(self, nodes):
        c = self.frozen(nodes)
        return float(np.max(np.linalg.norm(c, axis=1))) + self.problem.f.forcing_sup()


def _window_indices(problem: EPCAGProblem, core, t_cut):
    gap = problem.max_gap(core[0] - t_cut - 10.0, core[1] + t_cut + 10.0)
    delta = t_cut + (problem.p_max + 1) * gap
    i_lo = beta(problem.theta, core[0] - delta)
    i_hi = beta(problem.theta, core[1] + delta) + 1
    return int(i_lo), int(i_hi), delta


def _f_sup_a_priori(problem: EPCAGProblem):
    """Bound on ``||F(x)||`` at the fixed point: ``sup ||f(t, 0)|| / (1 - margin)``."""
    margin = problem.margin
    F0 = problem.f.zero_value_bound()
    if margin >= 1:
        return F0
    return F0 / (1.0 - margin)


def propagated_cut(dich: DichotomyData, l, m, shift, F_sup, budget, n_rates=400):
    """Cut length whose truncation error on the core stays below ``budget``.

    Truncating the integral perturbs the fixed point near the window ends,
    and the perturbation travels inward through the frozen node arguments
    (each hop reaches back at most ``shift``).  In the norm weighted by
    ``exp(-gamma |t - core|)`` the operator has Lipschitz constant

        l m (K1/(sigma1 - gamma) + K2/(sigma2 - gamma)) exp(gamma shift),

    and when that is below one the core error is at most
    ``F_sup (1 + l m kappa) kappa_gamma exp(-gamma T) / (1 - margin_gamma)``.
    The rate ``gamma`` is chosen to minimise the resulting ``T``.
    """
    parts = [(K, s) for K, s in ((dich.K1, dich.sigma1), (dich.K2, dich.sigma2)) if K > 0]
    if not parts or F_sup <= 0:
        return 0.0
    smin = min(s for _, s in parts)
    best = math.inf
    for gamma in smin * np.linspace(0.0, 1.0, n_rates + 2)[1:-1]:
        kg = sum(K / (s - gamma) for K, s in parts)
        mg = l * m * kg * math.exp(gamma * shift)
        if mg >= 1.0:
            continue
        amp = F_sup * (1.0 + l * m * dich.kappa) * kg / (1.0 - mg)
        T = max(0.0, math.log(max(amp / budget, 1.0)) / gamma)
        best = min(best, T)
    if not math.isfinite(best):
        raise TruncationBudgetError("no decay rate makes the weighted operator contractive")
    return best


def default_t_cut(problem: EPCAGProblem, tol):
    """Cut length for a core error below ``tol / 10`` given the a-priori forcing bound."""
    F_sup = _f_sup_a_priori(problem)
    direct = problem.dichotomy.cut_for(F_sup, tol / 10.0)
    if problem.l == 0:
        return direct
    shift = (problem.p_max + 1) * problem.max_gap()
    prop = propagated_cut(problem.dichotomy, problem.l, problem.m, shift, F_sup, tol / 10.0)
    return max(direct, prop)


def apply_Pi(problem: EPCAGProblem, psi: GridSolution, T_cut=None, tol=1e-8):
    """``Pi(psi)(t) = int G(t, s) F_theta(psi)(s) ds`` truncated to the window of ``psi``.

    ``psi`` must cover its core enlarged by ``T_cut + (max|p_j| + 1) * max gap``.
    The recorded ``tail_bound`` is ``||F_theta(psi)|| * (K1 e^{-sigma1 T}/sigma1 + K2 e^{-sigma2 T}/sigma2)``.
    """
    if T_cut is None:
        T_cut = default_t_cut(problem, tol)
    i_lo, i_hi, _ = _window_indices(problem, psi.core, T_cut)
    lo = psi.cells.theta_lo
    hi = psi.cells.theta_hi
    if i_lo < lo or i_hi > hi:
        raise WindowExhaustedError(
            f"psi covers nodes [{lo}, {hi}], operator needs [{i_lo}, {i_hi}]")
    op = _NodeOperator(problem, lo, hi)
    nodes = np.array([psi.node_value(i) for i in range(lo, hi + 1)])
    tail = problem.dichotomy.tail_bound(op.forcing_sup(nodes), T_cut)
    return op.solution(nodes, psi.core, {"tail_bound": tail, "t_cut": T_cut})


# ---------------------------------------------------------------------------
# Picard iteration


def picard_solve(problem: EPCAGProblem, core, tol=1e-8, t_cut=None, max_iter=500,
                 explore=False, check_residual=True):
    """Unique bounded solution on ``core`` by Picard iteration from ``psi_0 = 0``.

    Stops when the sup-norm node update over the whole window drops below
    ``tol``.  A margin ``>= 1`` raises :class:`NonContractiveError` unless
    ``explore`` is set, in which case the iteration proceeds with a warning
    and stops with the same error if the updates grow.

    Returns
    -------
    (GridSolution, SolveReport)
    """
    core = (float(core[0]), float(core[1]))
    if not core[1] > core[0]:
        raise ValueError("core must be a non-empty interval")
    margin = problem.margin
    if margin >= 1:
        if not explore:
            raise NonContractiveError(f"contraction margin {margin:.4g} >= 1")
        warnings.warn(f"contraction margin {margin:.4g} >= 1; iterating anyway")
    if t_cut is None:
        t_cut = default_t_cut(problem, tol)
    i_lo, i_hi, _ = _window_indices(problem, core, t_cut)
    op = _NodeOperator(problem, i_lo, i_hi)
    nodes = np.zeros((op.n_nodes, problem.n))
    updates, ratios = [], []
    floor = 1e3 * np.finfo(float).eps
    converged = False
    for it in range(1, max_iter + 1):
        new = op.step(nodes)
        upd = float(np.max(np.linalg.norm(new - nodes, axis=1)))
        scale = max(1.0, float(np.max(np.linalg.norm(new, axis=1))))
        if updates and updates[-1] > floor * scale * 1e3:
            ratios.append(upd / updates[-1])
        updates.append(upd)
        nodes = new
        if upd < tol:
            converged = True
            break
        if margin >= 1 and len(updates) > 5 and all(
                updates[-k] > updates[-k - 1] for k in range(1, 5)):
            raise NonContractiveError(f"updates grow; last {upd:.3e}")
    if not converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations (update {updates[-1]:.3e})")
    tail = problem.dichotomy.tail_bound(op.forcing_sup(nodes), t_cut)
    if tail > tol:
        raise TruncationBudgetError(f"tail bound {tail:.3e} exceeds tol {tol:.3e}")
    sol = op.solution(nodes, core, {"tail_bound": tail, "t_cut": t_cut})
    defect = float(np.max(np.linalg.norm(op.step(nodes) - nodes, axis=1)))
    res = residual(problem, sol) if check_residual else float("nan")
    sol.meta["sup_norm"] = sol.sup_norm()
    report = SolveReport(
        iterations=it,
        margin=margin,
        ratios=ratios,
        final_update=updates[-1],
        residual=res,
        tail_bound=tail,
        t_cut=t_cut,
        window=sol.window,
        core=core,
        updates=updates,
        fixed_point_defect=defect,
        converged=converged,
    )
    return sol, report


# ---------------------------------------------------------------------------
# checks


def residual(problem: EPCAGProblem, psi: GridSolution, rel_step=1e-5):
    """``max ||psi'(t) - A(t) psi(t) - F_theta(psi)(t)||`` over interior sample points of the core.

    ``psi'`` is a forward second-order difference taken inside the cell of
    each sample, so no breakpoint is crossed.
    """
    R = psi.cheb_order
    x, _ = cheb_points(R)
    cells = psi.cells
    a = cells.edges[:-1, None]
    b = cells.edges[1:, None]
    t = (a + (b - a) * (x[None, 1:-1] + 1.0) / 2.0)
    h = rel_step * (b - a) * np.ones_like(t)
    t, h = t.ravel(), h.ravel()
    sel = (t >= psi.core[0]) & (t + 2 * h <= psi.core[1])
    t, h = t[sel], h[sel]
    if t.size == 0:
        return 0.0
    y0, y1, y2 = psi(t), psi(t + h), psi(t + 2 * h)
    deriv = (-3.0 * y0 + 4.0 * y1 - y2) / (2.0 * h[:, None])
    Ax = np.einsum("kij,kj->ki", problem.A(t), y0)
    F = f_theta_eval(problem, psi, t)
    return float(np.max(np.linalg.norm(deriv - Ax - F, axis=1)))


@dataclass
class APDiagnostic:
    epsilon: float
    constant: float
    taus: list
    deviations: list
    flagged: list
    skipped: list

    @property
    def ok(self):
        return not self.flagged

    def to_dict(self):
        return asdict(self)


def diagnostic_constant(problem: EPCAGProblem, psi: GridSolution):
    """Engineering constant ``C`` of the translation test.

    A common ``eps``-translation of the inputs changes the forcing of the
    integral equation by at most ``eps * (1 + (1 + l m) sup ||psi||)``; the
    contraction turns that into ``kappa / (1 - margin)`` times as much, and
    ``+ 1`` absorbs the interpolation and truncation slack.
    """
    d = problem.dichotomy
    margin = problem.margin
    s = psi.sup_norm()
    return d.kappa * (1.0 + s + problem.l * problem.m * s) / (1.0 - margin) + 1.0


def ap_diagnostic(problem: EPCAGProblem, psi: GridSolution, taus, epsilon, constant=None,
                  per_unit=32):
    """Translation test ``sup_core ||psi(t + tau) - psi(t)|| <= C eps`` for common translation numbers.

    ``taus`` are common ``eps``-translation numbers of ``A``, ``f`` and the
    switching sequence.  Translations for which ``core + tau`` leaves the
    window of ``psi`` are listed under ``skipped``.
    """
    C = diagnostic_constant(problem, psi) if constant is None else float(constant)
    lo, hi = psi.core
    w_lo, w_hi = psi.window
    kept, devs, flagged, skipped = [], [], [], []
    for tau in taus:
        tau = float(tau)
        a, b = max(lo, w_lo - tau), min(hi, w_hi - tau)
        if b <= a:
            skipped.append(tau)
            continue
        t = np.linspace(a, b, max(2, int((b - a) * per_unit) + 1))
        dev = float(np.max(np.linalg.norm(psi(t + tau) - psi(t), axis=1)))
        kept.append(tau)
        devs.append(dev)
        if dev > C * epsilon:
            flagged.append(tau)
    return APDiagnostic(float(epsilon), C, kept, devs, flagged, skipped)
