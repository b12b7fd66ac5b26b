"""Forward simulation by the method of steps, the node map and stability checks.

On each switching interval ``[theta_i, theta_{i+1})`` the deviated arguments
``x(theta_{i-p_j})`` are already known, so the equation is an ordinary one
and is integrated with continuity at the nodes.  Only delays (``p_j >= 0``)
are allowed here.  The simulation starts at ``theta_0 = 0`` (the sequence
can be re-based for other start nodes).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConditionError, IntegrationError
from .grid import GridSolution, build_cells, cheb_points
from .lindich import CauchyCache, _Flow, opnorm
from .nonlinear import ProductLogistic
from .timescale import beta, gap_stats, tau_deviation

__all__ = [
    "InitialData",
    "Trajectory",
    "solve_ivp",
    "node_map",
    "node_map_linear",
    "uniqueness_check",
    "StabilityReport",
    "best_decay_rate",
    "stability_constants",
    "stability_experiment",
]


def _require_delays(problem):
    if min(problem.deviations) < 0:
        raise ValueError("forward simulation needs delayed arguments only (all p_j >= 0)")


@dataclass
class InitialData:
    """Node history ``x(theta_i)`` for ``i = start - max p_j, ..., start``.

    Every history node is needed: on interval ``i`` the argument
    ``x(theta_{i-p})`` reads node ``i - p``, which runs through all of
    ``-p, ..., -1`` during the first ``p`` intervals.
    """

    history: dict
    start: int = 0

    def __post_init__(self):
        self.history = {int(k): np.atleast_1d(np.asarray(v, dtype=float))
                        for k, v in self.history.items()}

    @classmethod
    def from_eta(cls, deviations, eta, x0=None, start=0):
        """History from ``eta_j`` at ``theta_{-p_j}`` (and ``x0`` at ``theta_0``).

        Duplicated deviations must carry identical vectors; nodes between the
        given ones must still be supplied through ``x0``/``eta`` or the
        method raises.
        """
        hist = {}
        for p, v in zip(deviations, eta):
            v = np.atleast_1d(np.asarray(v, dtype=float))
            k = start - int(p)
            if k in hist and not np.array_equal(hist[k], v):
                raise ValueError(f"inconsistent initial values at node {k}")
            hist[k] = v
        if x0 is not None:
            x0 = np.atleast_1d(np.asarray(x0, dtype=float))
            if start in hist and not np.array_equal(hist[start], x0):
                raise ValueError("inconsistent initial value at the start node")
            hist[start] = x0
        return cls(hist, start)

    @classmethod
    def constant(cls, value, deviations, start=0):
        pmax = max(int(p) for p in deviations)
        return cls({start - k: value for k in range(pmax + 1)}, start)

    @classmethod
    def from_solution(cls, sol, deviations, start=0):
        pmax = max(int(p) for p in deviations)
        return cls({start - k: sol.node_value(start - k, clamp=False) for k in range(pmax + 1)},
                   start)

    def required(self, deviations):
        pmax = max(int(p) for p in deviations)
        return list(range(self.start - pmax, self.start + 1))

    def check(self, deviations, n):
        missing = [k for k in self.required(deviations) if k not in self.history]
        if missing:
            raise ValueError(f"initial data missing nodes {missing}")
        for k, v in self.history.items():
            if v.shape != (n,):
                raise ValueError(f"initial value at node {k} must have length {n}")


class Trajectory(GridSolution):
    """Forward solution on ``[theta_start, theta_N]`` plus its node history."""

    def __init__(self, cells, edge_values, dense, core, history, meta=None):
        super().__init__(cells, edge_values, dense, core, dict(meta or {}))
        self.history = history

    def node_value(self, i, clamp=False):
        i = int(i)
        if i < self.cells.theta_lo and i in self.history:
            return self.history[i]
        return super().node_value(i, clamp)


def _interval_rhs(problem, z, law_rate=None):
    """RHS of the frozen ODE on one interval."""
    A, f = problem.A, problem.f
    if law_rate is not None:
        return lambda t, y: (A(t) @ y) + law_rate * y
    c = f.node_term(z)
    g = f.g
    return lambda t, y: A(t) @ y + c + g(t)


def solve_ivp(problem, init: InitialData, t_end, rtol=1e-10, max_cell=1.0, cheb=None):
    """Method-of-steps simulation from ``theta_start`` to (at least) ``t_end``.

    Returns a :class:`Trajectory` whose core is ``[theta_start, t_end]``.
    The scalar product-logistic form is solved in closed form on each
    interval (``log x`` is linear there), which keeps positive data positive.
    """
    _require_delays(problem)
    seq = problem.theta
    s = init.start
    init.check(problem.deviations, problem.n)
    t0 = seq.theta(s)
    if not t_end > t0:
        raise ValueError("t_end must exceed the start node")
    i_end = int(beta(seq, t_end)) + 1
    cells = build_cells(seq, s, i_end, max_cell)
    R = cheb or 17
    xc, _ = cheb_points(R)
    nodes = dict(init.history)
    C = cells.count
    dense = np.empty((C, R, problem.n))
    edges = np.empty((C + 1, problem.n))
    edges[0] = nodes[s]
    product = isinstance(problem.f, ProductLogistic)
    x = nodes[s].copy()
    k = 0
    for i in range(s, i_end):
        z = np.array([nodes[i - p] for p in problem.deviations])
        a_i, b_i = seq.theta(i), seq.theta(i + 1)
        ks = [kk for kk in range(k, C) if cells.interval[kk] == i]
        if product:
            rate = float(problem.f.rate(z[:, 0])[0])
            Ap = problem.A
            base = float(Ap.antiderivative(a_i)[0, 0])

            def closed(t, x_start=x[0], rate=rate, base=base, a_i=a_i):
                tt = np.asarray(t, dtype=float)
                log = Ap.antiderivative(tt)[..., 0, 0] - base + rate * (tt - a_i)
                return (x_start * np.exp(log))[..., None]

            for kk in ks:
                a, b = cells.edges[kk], cells.edges[kk + 1]
                dense[kk] = closed(a + (b - a) * (xc + 1.0) / 2.0)
                edges[kk + 1] = dense[kk][-1]
            x = edges[ks[-1] + 1].copy()
        else:
            rhs = _interval_rhs(problem, z)
            sol = integrate.solve_ivp(rhs, (a_i, b_i), x, method="DOP853", rtol=rtol,
                                      atol=rtol * 1e-2, dense_output=True)
            if not sol.success:
                raise IntegrationError(f"interval {i}: {sol.message}")
            for kk in ks:
                a, b = cells.edges[kk], cells.edges[kk + 1]
                dense[kk] = sol.sol(a + (b - a) * (xc + 1.0) / 2.0).T
                edges[kk + 1] = dense[kk][-1]
            x = sol.y[:, -1].copy()
            edges[ks[-1] + 1] = x
            dense[ks[-1]][-1] = x
        nodes[i + 1] = x
        k = ks[-1] + 1
    history = {i: v for i, v in init.history.items() if i < s}
    return Trajectory(cells, edges, dense, (t0, float(t_end)), history,
                      {"rtol": rtol, "method": "closed-form" if product else "DOP853"})


# ---------------------------------------------------------------------------
# node map


@dataclass
class NodeMapLinear:
    """``x(theta_{i+1}) = Phi x(theta_i) + sum_j B_j x(theta_{i-p_j}) + e`` (affine problems)."""

    Phi: np.ndarray
    B: list
    e: np.ndarray
    deviations: list

    def multiplier(self):
        """Companion matrix acting on ``(x_i, x_{i-1}, ..., x_{i-pmax})``."""
        n = self.Phi.shape[0]
        pmax = max(self.deviations)
        M = np.zeros(((pmax + 1) * n, (pmax + 1) * n))
        M[:n, :n] = self.Phi
        for p, Bj in zip(self.deviations, self.B):
            M[:n, p * n:(p + 1) * n] += Bj
        for r in range(1, pmax + 1):
            M[r * n:(r + 1) * n, (r - 1) * n:r * n] = np.eye(n)
        return M


def _interval_cache(problem, i, max_cell=1.0):
    cells = build_cells(problem.theta, i, i + 1, max_cell)
    return CauchyCache(problem.A, cells.edges)


def node_map_linear(problem, i, max_cell=1.0):
    """Variation-of-constants form of one step for an affine nonlinearity."""
    from .nonlinear import Saturated, Affine

    _require_delays(problem)
    f = problem.f
    if not isinstance(f, Affine) or isinstance(f, Saturated):
        raise TypeError("the linear node map exists for affine nonlinearities only")
    cache = _interval_cache(problem, i, max_cell)
    Phi = np.eye(problem.n)
    D = np.zeros((problem.n, problem.n))
    e = np.zeros(problem.n)
    Fg = f.g(cache.quad_nodes.ravel()).reshape(cache.cells, cache.quad_order, problem.n)
    Dk = cache.kernel_sum()
    ek = cache.kernel_apply(Fg)
    for k in range(cache.cells):
        Phi = cache.phi[k] @ Phi
        D = cache.phi[k] @ D + Dk[k]
        e = cache.phi[k] @ e + ek[k]
    return NodeMapLinear(Phi, [D @ Cj for Cj in f.C], e, list(problem.deviations))


def node_map(problem, nodes, i, max_cell=1.0):
    """``x(theta_{i+1})`` from the node history ``nodes`` (dict index -> vector).

    ``X(theta_{i+1}, theta_i) x(theta_i) + int X(theta_{i+1}, s) f(s, frozen) ds``.
    """
    _require_delays(problem)
    z = np.array([np.atleast_1d(nodes[i - p]) for p in problem.deviations], dtype=float)
    xi = np.atleast_1d(np.asarray(nodes[i], dtype=float))
    f = problem.f
    if isinstance(f, ProductLogistic):
        a, b = problem.theta.theta(i), problem.theta.theta(i + 1)
        log = float(problem.A.integral(a, b)[0, 0]) + float(f.rate(z[:, 0])[0]) * (b - a)
        return xi * math.exp(log)
    cache = _interval_cache(problem, i, max_cell)
    c = f.node_term(z)
    F = c[None, None, :] + f.g(cache.quad_nodes.ravel()).reshape(
        cache.cells, cache.quad_order, problem.n)
    w = cache.kernel_apply(F)
    x = xi.copy()
    for k in range(cache.cells):
        x = cache.phi[k] @ x + w[k]
    return x


# ---------------------------------------------------------------------------
# uniqueness (C9) and stability (C6-C8)


@dataclass
class UniquenessReport:
    M: float
    theta_bar: float
    product: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def _theta_bar(problem, t_lo=-50.0, t_hi=50.0):
    idx = problem.theta.indices_between(t_lo, t_hi)
    return gap_stats(problem.theta, (int(idx[0]) - 1, int(idx[-1]) + 1)).max_gap


def uniqueness_check(problem, window=(-20.0, 20.0), n_base=41, n_sep=201):
    """``M = sup ||X(t, s)||`` over ``0 <= t - s <= theta_bar`` and the C9 product ``M theta_bar m l``."""
    tb = _theta_bar(problem)
    flow = _Flow(problem.A)
    bases = [0.0] if flow.time_invariant else np.linspace(window[0], window[1], n_base)
    d = np.linspace(0.0, tb, n_sep)
    M = 0.0
    for s in bases:
        seg = flow.segment(float(s), float(s) + tb)
        M = max(M, float(np.max(opnorm(seg.fwd(s + d)))))
    prod = M * tb * problem.m * problem.l
    return UniquenessReport(M, tb, prod, prod < 1.0)


@dataclass
class StabilityReport:
    K: float
    sigma: float
    a: float
    tau: float
    zeta: float
    L: float
    delta: float
    l: float
    m: int
    flags: dict
    M: float = float("nan")
    theta_bar: float = float("nan")
    trial_margins: list = field(default_factory=list)
    worst_trial: int | None = None
    worst_margin: float = 0.0
    reference_error: float = 0.0
    passed: bool = True

    def to_dict(self):
        return asdict(self)


def best_decay_rate(K, sigma, l, m, tau):
    """Largest ``a`` in ``(0, sigma)`` keeping ``zeta(a)`` at half of ``sup_a zeta = 1 - K l m / sigma``.

    ``zeta(a) = 1 - e^{a tau} K l m / (sigma - a)`` decreases in ``a``, so C8
    holds for some admissible rate exactly when ``K l m < sigma``; this picks
    a rate that keeps a usable ``zeta`` while still decaying.  Returns
    ``None`` when no rate works.
    """
    from scipy import optimize

    c = K * l * m
    if c == 0:
        return sigma / 2.0
    z0 = 1.0 - c / sigma
    if z0 <= 0:
        return None
    target = z0 / 2.0
    g = lambda a: 1.0 - math.exp(a * tau) * c / (sigma - a) - target
    return float(optimize.brentq(g, 0.0, sigma * (1.0 - 1e-12), xtol=1e-14))


def stability_constants(problem, one_sided=None, a=None, delta=0.01, horizon=64):
    """``tau``, ``zeta = 1 - e^{a tau} K l m / (sigma - a)``, ``L = K delta / zeta`` and flags C6-C9.

    ``one_sided = (K, sigma)`` bounds ``||X(t, s)|| <= K e^{-sigma (t - s)}``
    for ``t >= s``; it defaults to the dichotomy data of the problem when the
    whole space is stable.  ``a`` defaults to ``sigma / 2``.
    """
    _require_delays(problem)
    if one_sided is None:
        one_sided = problem.dichotomy.one_sided_constants()
    flags = {}
    if one_sided is None:
        flags["C6"] = False
        K = sigma = float("nan")
    else:
        K, sigma = float(one_sided[0]), float(one_sided[1])
        flags["C6"] = bool(K >= 1.0 and sigma > 0)
    if a is None:
        a = sigma / 2.0
    if not 0 < a < sigma:
        raise ValueError("decay rate must satisfy 0 < a < sigma")
    l, m = problem.l, problem.m
    tau = tau_deviation(problem.theta, problem.deviations, (0, horizon))
    flags["C7"] = bool(l < sigma / (m * K))
    zeta = 1.0 - math.exp(a * tau) * K * l * m / (sigma - a)
    flags["C8"] = bool(zeta > 0)
    L = K * delta / zeta if zeta > 0 else float("inf")
    u = uniqueness_check(problem)
    flags["C9"] = bool(u.passed)
    return StabilityReport(K, sigma, a, tau, zeta, L, delta, l, m, flags, u.M, u.theta_bar)


def _ball(rng, n, delta):
    v = rng.normal(size=n)
    v /= np.linalg.norm(v)
    # strictly inside the open ball
    return v * delta * rng.uniform() ** (1.0 / n) * (1.0 - 1e-12)


def stability_experiment(problem, xi: GridSolution, delta=0.01, a=None, trials=32, seed=0,
                         t_end=20.0, one_sided=None, rtol=1e-11):
    """Random perturbations of ``xi`` checked against ``L(l, delta) e^{-a t}`` on ``[0, t_end]``.

    Each trial perturbs every history node ``xi(theta_k)``, ``k = -max p, ..., 0``,
    by a vector drawn uniformly from the open ``delta``-ball and simulates
    forward.  The reference is the simulation started from the unperturbed
    nodes of ``xi``.  A trial margin is ``max_t ||x - xi|| e^{a t} / L``;
    the report passes when every margin is at most one.
    """
    rep = stability_constants(problem, one_sided, a, delta)
    for c in ("C6", "C7", "C8"):
        if not rep.flags[c]:
            raise ConditionError(c, "stability experiment requires C6-C8")
    rng = np.random.default_rng(seed)
    init = InitialData.from_solution(xi, problem.deviations)
    ref = solve_ivp(problem, init, t_end, rtol)
    t, xr, _ = ref.sample(core_only=True)
    try:
        rep.reference_error = float(np.max(np.linalg.norm(xi(t) - xr, axis=1)))
    except Exception:  # xi shorter than the horizon
        rep.reference_error = float("nan")
    weight = np.exp(rep.a * t) / rep.L if delta > 0 else None
    margins = []
    for k in range(trials):
        hist = {i: v + _ball(rng, problem.n, delta) for i, v in init.history.items()}
        traj = solve_ivp(problem, InitialData(hist, init.start), t_end, rtol)
        _, x, _ = traj.sample(core_only=True)
        diff = np.linalg.norm(x - xr, axis=1)
        margins.append(float(np.max(diff * weight)) if delta > 0 else float(np.max(diff)))
    rep.trial_margins = margins
    if margins:
        rep.worst_trial = int(np.argmax(margins))
        rep.worst_margin = float(margins[rep.worst_trial])
    rep.passed = bool(rep.worst_margin <= 1.0)
    return rep
