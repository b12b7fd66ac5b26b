"""Linear machinery for ``x' = A(t) x``.

Fundamental and Cauchy matrices, exponential-dichotomy constants, the
Green's function and the unique bounded solution of ``x' = A(t) x + f(t)``.

Long-range Cauchy matrices are never formed from global inverses.  Flows are
computed cell by cell, and the bounded solution is split into its stable
and unstable parts, which are propagated forward and backward respectively
using projections tracked along the window, so every recursion is a
contraction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, linalg, optimize

from .apkit import TrigPolynomial
from .errors import IntegrationError, NoEnvelopeError, SpectralGapError, TruncationBudgetError
from .grid import DEFAULT_CHEB, Cells, GridSolution, build_cells, cheb_points
from .timescale import ThetaSequence

__all__ = [
    "DichotomyData",
    "CauchyCache",
    "BoundedOperator",
    "as_matrix_poly",
    "fundamental",
    "green",
    "spectral_dichotomy",
    "estimate_dichotomy",
    "bounded_solution",
    "contraction_margin",
    "track_projections",
]

DEFAULT_RTOL = 1e-10
DEFAULT_QUAD = 12
COND_WARN = 1e8


def opnorm(M):
    M = np.asarray(M, dtype=float)
    if M.ndim == 2:
        return float(np.linalg.norm(M, 2))
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def as_matrix_poly(A):
    """Coerce a number, array or :class:`TrigPolynomial` to an n-by-n polynomial."""
    if isinstance(A, TrigPolynomial):
        P = A
    else:
        P = TrigPolynomial(np.asarray(A, dtype=float))
    if P.const.ndim == 0:
        P = TrigPolynomial(P.const.reshape(1, 1),
                           [(w, c.reshape(1, 1), s.reshape(1, 1))
                            for w, c, s in zip(P.omegas, P.cos, P.sin)])
    if P.const.ndim != 2 or P.const.shape[0] != P.const.shape[1]:
        raise ValueError("A must be a square matrix")
    return P


# ---------------------------------------------------------------------------
# flows: X(s, a) on a segment [a, b]


class _ConstantSegment:
    def __init__(self, A, a, b):
        self.A, self.a, self.b = A, a, b

    def fwd(self, s):
        d = np.asarray(s, dtype=float) - self.a
        return linalg.expm(self.A[None] * d[:, None, None])

    def inv(self, s):
        d = np.asarray(s, dtype=float) - self.a
        return linalg.expm(-self.A[None] * d[:, None, None])


class _ScalarSegment:
    def __init__(self, a_poly, a, b):
        self.poly, self.a, self.b = a_poly, a, b
        self._base = float(a_poly.antiderivative(a)[0, 0])

    def _log(self, s):
        return self.poly.antiderivative(np.asarray(s, dtype=float))[:, 0, 0] - self._base

    def fwd(self, s):
        return np.exp(self._log(s))[:, None, None]

    def inv(self, s):
        return np.exp(-self._log(s))[:, None, None]


class _RKSegment:
    def __init__(self, A_poly, a, b, rtol):
        n = A_poly.shape[0]
        self.a, self.b, self.n = a, b, n

        def rhs(t, y):
            return (A_poly(t) @ y.reshape(n, n)).ravel()

        sol = integrate.solve_ivp(rhs, (a, b), np.eye(n).ravel(), method="DOP853",
                                  rtol=rtol, atol=rtol * 1e-2, dense_output=True)
        if not sol.success:
            raise IntegrationError(sol.message)
        self._sol = sol.sol

    def fwd(self, s):
        s = np.asarray(s, dtype=float)
        return self._sol(s).T.reshape(s.size, self.n, self.n)

    def inv(self, s):
        return np.linalg.inv(self.fwd(s))


class _Flow:
    def __init__(self, A, rtol=DEFAULT_RTOL):
        self.A = as_matrix_poly(A)
        self.n = self.A.shape[0]
        self.rtol = rtol
        self.time_invariant = self.A.is_constant
        self._Amat = self.A.mean_value() if self.time_invariant else None

    def segment(self, a, b):
        if self.time_invariant:
            return _ConstantSegment(self._Amat, a, b)
        if self.n == 1:
            return _ScalarSegment(self.A, a, b)
        return _RKSegment(self.A, a, b, self.rtol)


def fundamental(A, t, rtol=DEFAULT_RTOL, t0=0.0):
    """``X(t)`` with ``X(t0) = I`` by adaptive Runge-Kutta (DOP853)."""
    Ap = as_matrix_poly(A)
    n = Ap.shape[0]
    if t == t0:
        return np.eye(n)

    def rhs(s, y):
        return (Ap(s) @ y.reshape(n, n)).ravel()

    sol = integrate.solve_ivp(rhs, (t0, t), np.eye(n).ravel(), method="DOP853",
                              rtol=rtol, atol=rtol * 1e-2)
    if not sol.success:
        raise IntegrationError(sol.message)
    return sol.y[:, -1].reshape(n, n)


# ---------------------------------------------------------------------------
# Cauchy matrices on a cell grid


class CauchyCache:
    """Cell-wise flows and node-to-node factors ``Phi_k = X(e_{k+1}, e_k)``.

    Built once, then read-only.  ``quad_order`` Gauss-Legendre nodes per cell
    are used for every integral against the Cauchy matrix.
    """

    def __init__(self, A, edges, rtol=DEFAULT_RTOL, quad_order=DEFAULT_QUAD, cheb=DEFAULT_CHEB):
        self.flow = _Flow(A, rtol)
        self.A = self.flow.A
        self.n = self.flow.n
        self.edges = np.asarray(edges, dtype=float)
        self.rtol = rtol
        self.quad_order = quad_order
        self.cheb = cheb
        self._gx, self._gw = leggauss(quad_order)
        self._cx, _ = cheb_points(cheb)
        self._cell_cache = {}
        C = self.edges.size - 1
        self.phi = np.empty((C, self.n, self.n))
        self.phi_inv = np.empty((C, self.n, self.n))
        self.quad_nodes = np.empty((C, quad_order))
        self.quad_weights = np.empty((C, quad_order))
        self.quad_kernel = np.empty((C, quad_order, self.n, self.n))
        for k in range(C):
            data = self._cell(k)
            self.phi[k] = data["phi"]
            self.phi_inv[k] = data["phi_inv"]
            a, b = self.edges[k], self.edges[k + 1]
            self.quad_nodes[k] = a + (b - a) * (self._gx + 1.0) / 2.0
            self.quad_weights[k] = self._gw * (b - a) / 2.0
            self.quad_kernel[k] = data["kernel"]

    @property
    def cells(self):
        return self.edges.size - 1

    def _key(self, k):
        if self.flow.time_invariant:
            return ("len", round(float(self.edges[k + 1] - self.edges[k]), 12))
        return ("cell", k)

    def _cell(self, k):
        key = self._key(k)
        if key in self._cell_cache:
            return self._cell_cache[key]
        a, b = float(self.edges[k]), float(self.edges[k + 1])
        seg = self.flow.segment(a, b)
        phi = seg.fwd(np.array([b]))[0]
        s = a + (b - a) * (self._gx + 1.0) / 2.0
        kernel = phi[None] @ seg.inv(s)
        data = {"seg": seg, "phi": phi, "phi_inv": np.linalg.inv(phi), "kernel": kernel,
                "a": a}
        self._cell_cache[key] = data
        return data

    def segment(self, k):
        data = self._cell(k)
        if data["a"] == self.edges[k]:
            return data["seg"]
        return self.flow.segment(float(self.edges[k]), float(self.edges[k + 1]))

    def cell_of(self, t):
        k = int(np.searchsorted(self.edges, t, side="right") - 1)
        return min(max(k, 0), self.cells - 1)

    def _between(self, kt, ks):
        """``X(e_kt, e_ks)`` from node-to-node factors."""
        M = np.eye(self.n)
        if kt > ks:
            for k in range(ks, kt):
                M = self.phi[k] @ M
        elif kt < ks:
            for k in range(kt, ks):
                M = M @ self.phi_inv[k]
        return M

    def cauchy(self, t, s):
        """``X(t, s) = X(t) X(s)^{-1}`` assembled cell by cell."""
        lo, hi = self.edges[0], self.edges[-1]
        if not (lo - 1e-12 <= t <= hi + 1e-12 and lo - 1e-12 <= s <= hi + 1e-12):
            raise ValueError("cauchy arguments outside the cached window")
        kt, ks = self.cell_of(t), self.cell_of(s)
        ft = self.segment(kt).fwd(np.array([t]))[0]
        is_ = self.segment(ks).inv(np.array([s]))[0]
        return ft @ self._between(kt, ks) @ is_

    def fundamental_at_edges(self, ref=0.0):
        """``X(e_k)`` normalised by ``X(ref) = I`` (for diagnostics on short windows)."""
        r = self.cell_of(ref)
        Xr = self.segment(r).inv(np.array([ref]))[0]  # X(e_r, ref)
        out = np.empty((self.cells + 1, self.n, self.n))
        out[r] = Xr
        for k in range(r, self.cells):
            out[k + 1] = self.phi[k] @ out[k]
        for k in range(r - 1, -1, -1):
            out[k] = self.phi_inv[k] @ out[k + 1]
        return out

    # -- integrals against the kernel --------------------------------------
    def kernel_sum(self):
        """``int_cell X(e_{k+1}, s) ds`` per cell."""
        return np.einsum("kq,kqij->kij", self.quad_weights, self.quad_kernel)

    def kernel_apply(self, F):
        """``int_cell X(e_{k+1}, s) F(s) ds`` with ``F`` sampled at the quadrature nodes (C, Q, n)."""
        return np.einsum("kq,kqij,kqj->ki", self.quad_weights, self.quad_kernel, F)

    def _dense_cell(self, k):
        data = self._cell(k)
        if "dense" not in data:
            seg = self.segment(k)
            a, b = float(self.edges[k]), float(self.edges[k + 1])
            t = a + (b - a) * (self._cx + 1.0) / 2.0
            half = (t - a) / 2.0
            S = a + half[:, None] * (self._gx[None, :] + 1.0)
            W = half[:, None] * self._gw[None, :]
            inv = seg.inv(S.ravel()).reshape(S.shape + (self.n, self.n))
            data["dense"] = (seg.fwd(t), S - a, W, inv)
        return data["dense"]

    def dense(self, start_values, forcing):
        """Values at the Chebyshev points of every cell, integrating forward from each left edge.

        ``forcing(k, s)`` returns ``F`` on cell ``k`` at times ``s`` (shape (len(s), n)).
        """
        C = self.cells
        out = np.empty((C, self.cheb, self.n))
        for k in range(C):
            fwd, S_off, W, inv = self._dense_cell(k)
            S = self.edges[k] + S_off
            F = np.asarray(forcing(k, S.ravel()), dtype=float).reshape(S.shape + (self.n,))
            integral = np.einsum("rq,rqij,rqj->ri", W, inv, F)
            out[k] = np.einsum("rij,rj->ri", fwd, start_values[k][None, :] + integral)
        return out


# ---------------------------------------------------------------------------
# dichotomy data


@dataclass
class DichotomyData:
    """Projection ``P`` (at ``t = 0``) and constants of the exponential dichotomy.

    An empty stable (unstable) part is marked by ``K1 = 0`` (``K2 = 0``).
    ``one_sided`` optionally carries ``(K, sigma)`` with
    ``||X(t, s)|| <= K exp(-sigma (t - s))`` for ``t >= s``.
    """

    P: np.ndarray
    K1: float
    sigma1: float
    K2: float
    sigma2: float
    one_sided: tuple | None = None
    source: str = "override"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if np.linalg.norm(self.P @ self.P - self.P) > 1e-10 * max(1.0, np.linalg.norm(self.P)):
            raise ValueError("P must be idempotent")
        if self.K1 < 0 or self.K2 < 0 or not self.sigma1 > 0 or not self.sigma2 > 0:
            raise ValueError("dichotomy constants must be positive")
        if self.one_sided is not None:
            self.one_sided = (float(self.one_sided[0]), float(self.one_sided[1]))

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def rank(self):
        return int(round(np.trace(self.P)))

    @property
    def kappa(self):
        """``K1/sigma1 + K2/sigma2``: the sup-norm bound of the bounded-solution operator."""
        return self.K1 / self.sigma1 + self.K2 / self.sigma2

    def tail_bound(self, F_sup, T):
        return F_sup * (self.K1 * math.exp(-self.sigma1 * T) / self.sigma1
                        + self.K2 * math.exp(-self.sigma2 * T) / self.sigma2)

    def cut_for(self, F_sup, budget):
        """Smallest ``T >= 0`` with ``tail_bound(F_sup, T) <= budget``."""
        T = 0.0
        for K, s in ((self.K1, self.sigma1), (self.K2, self.sigma2)):
            if K > 0 and F_sup > 0:
                T = max(T, math.log(max(1.0, 2.0 * K * F_sup / (s * budget))) / s)
        return T

    def one_sided_constants(self):
        if self.one_sided is not None:
            return self.one_sided
        if self.rank == self.n:
            return (max(1.0, self.K1), self.sigma1)
        return None

    def to_dict(self):
        return {
            "P": self.P.tolist(),
            "K1": self.K1,
            "sigma1": self.sigma1,
            "K2": self.K2,
            "sigma2": self.sigma2,
            "one_sided": list(self.one_sided) if self.one_sided else None,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d, n=None):
        P = np.asarray(d["P"], dtype=float)
        if P.ndim == 0:
            P = P.reshape(1, 1)
        if n is not None and P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}")
        rank = int(round(np.trace(P)))
        dim = P.shape[0]
        K1 = float(d.get("K1", 0.0)) if rank > 0 else 0.0
        K2 = float(d.get("K2", 0.0)) if rank < dim else 0.0
        s1 = float(d.get("sigma1", 1.0))
        s2 = float(d.get("sigma2", 1.0))
        one = d.get("one_sided")
        return cls(P, K1, s1, K2, s2, tuple(one) if one else None, "override")


def contraction_margin(dich: DichotomyData, l, m):
    """``l * m * (K1/sigma1 + K2/sigma2)``; the integral operator contracts when this is < 1."""
    if l < 0 or m < 1:
        raise ValueError("need l >= 0 and m >= 1")
    return float(l) * int(m) * dich.kappa


def _stable_bases(A):
    n = A.shape[0]
    eig = np.linalg.eigvals(A)
    scale = 1.0 + np.max(np.abs(eig))
    if np.any(np.abs(eig.real) <= 1e-10 * scale):
        raise SpectralGapError("A has an eigenvalue on the imaginary axis")
    Ts, Zs, ks = linalg.schur(A, output="real", sort="lhp")
    Tu, Zu, ku = linalg.schur(A, output="real", sort="rhp")
    return eig, Zs[:, :ks], Zu[:, :ku], Ts[:ks, :ks], Tu[:ku, :ku]


def _projection(S, U):
    n = S.shape[0] if S.size else U.shape[0]
    r = S.shape[1]
    B = np.hstack([S, U])
    D = np.zeros((n, n))
    D[:r, :r] = np.eye(r)
    return B @ D @ np.linalg.inv(B)


def _log_env(fn, sigma, d):
    with np.errstate(divide="ignore"):
        return np.log(fn(d)) + sigma * d


def _sup_envelope(fn, sigma, start_horizon):
    """``sup_{d >= 0} fn(d) exp(sigma d)`` by growing-horizon sampling plus local refinement."""
    D = start_horizon
    for _ in range(8):
        d = np.linspace(0.0, D, 2001)
        logs = _log_env(fn, sigma, d)
        half = d.size // 2
        if np.max(logs[half:]) <= np.max(logs[: half + 1]) + 1e-9:
            break
        D *= 2.0
    i = int(np.argmax(logs))
    lo = d[max(i - 1, 0)]
    hi = d[min(i + 1, d.size - 1)]
    best = float(logs[i])
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda x: -float(_log_env(fn, sigma, np.array([x]))[0]),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    return math.exp(best)


def _bounded_at(fn, rate, horizon):
    """Whether ``fn(d) exp(rate d)`` stops growing between ``horizon`` and ``4 horizon``."""
    m1 = np.max(_log_env(fn, rate, np.linspace(0.0, horizon, 801)))
    m2 = np.max(_log_env(fn, rate, np.linspace(0.0, 4.0 * horizon, 3201)))
    return m2 <= m1 + 1e-8


def _rate_and_constant(fn, gap, margin):
    # the full gap is kept when the envelope at that rate is already bounded
    # (semisimple leading eigenvalues); otherwise it is reduced by ``margin``
    if _bounded_at(fn, gap, 20.0 / gap):
        sigma = gap
    else:
        sigma = (1.0 - margin) * gap
    return _sup_envelope(fn, sigma, 20.0 / sigma), sigma


def spectral_dichotomy(A, margin=0.02):
    """Dichotomy data of a constant matrix from its spectral splitting.

    ``P`` projects onto the stable invariant subspace along the unstable one;
    the rates are the spectral gaps, reduced by the relative ``margin`` when
    the envelope at the full gap is unbounded (non-semisimple leading
    eigenvalues); the constants are sampled sups of ``||e^{At} P|| e^{sigma1 t}`` and
    ``||e^{-At} (I - P)|| e^{sigma2 t}``.
    """
    Amat = np.atleast_2d(np.asarray(as_matrix_poly(A).mean_value(), dtype=float))
    n = Amat.shape[0]
    eig, S, U, Ts, Tu = _stable_bases(Amat)
    P = _projection(S, U)
    I = np.eye(n)
    K1 = K2 = 0.0
    s1 = s2 = 1.0
    # e^{At} P = S e^{Ts t} S^T P keeps the flow on the invariant subspace, so
    # rounding in the complementary directions is never amplified
    if S.shape[1]:
        gap = float(np.min(-eig.real[eig.real < 0]))
        SP = S.T @ P
        K1, s1 = _rate_and_constant(
            lambda d: opnorm(S @ linalg.expm(Ts[None] * d[:, None, None]) @ SP), gap, margin)
    if U.shape[1]:
        gap = float(np.min(eig.real[eig.real > 0]))
        UQ = U.T @ (I - P)
        K2, s2 = _rate_and_constant(
            lambda d: opnorm(U @ linalg.expm(-Tu[None] * d[:, None, None]) @ UQ), gap, margin)
    dich = DichotomyData(P, K1, s1, K2, s2, source="spectral",
                         info={"margin": margin, "eigenvalues_real": sorted(eig.real.tolist())})
    return dich


def track_projections(phi, phi_inv, P_guess):
    """Dichotomy projections at every edge of a cell grid.

    The unstable subspace is carried forward from the left edge and the
    stable subspace backward from the right edge, both re-orthonormalised
    each step, starting from the ranges of ``P_guess``.  Both recursions
    converge towards the true invariant subspaces, so the result is accurate
    away from the window ends.
    """
    C, n, _ = phi.shape
    P_guess = np.asarray(P_guess, dtype=float)
    r = int(round(np.trace(P_guess)))
    if r == 0:
        return np.zeros((C + 1, n, n))
    if r == n:
        return np.broadcast_to(np.eye(n), (C + 1, n, n)).copy()
    Uq, _, _ = np.linalg.svd(P_guess)
    S = Uq[:, :r]
    Uq2, _, _ = np.linalg.svd(np.eye(n) - P_guess)
    U = Uq2[:, : n - r]
    Us = np.empty((C + 1, n, n - r))
    Ss = np.empty((C + 1, n, r))
    Us[0] = U
    for k in range(C):
        U, _ = np.linalg.qr(phi[k] @ U)
        Us[k + 1] = U
    Ss[C] = S
    for k in range(C - 1, -1, -1):
        S, _ = np.linalg.qr(phi_inv[k] @ S)
        Ss[k] = S
    B = np.concatenate([Ss, Us], axis=2)
    D = np.zeros((n, n))
    D[:r, :r] = np.eye(r)
    return B @ D @ np.linalg.inv(B)


def _default_guess(Ap):
    try:
        _, S, U, _, _ = _stable_bases(np.atleast_2d(Ap.mean_value()))
    except SpectralGapError as exc:
        raise NoEnvelopeError("averaged matrix has no spectral splitting") from exc
    return _projection(S, U)


def estimate_dichotomy(A, grid=(-20.0, 20.0, 0.25), P=None, margin=0.02, rtol=DEFAULT_RTOL):
    """Fit ``(K1, sigma1, K2, sigma2)`` to sampled Cauchy-matrix norms on a grid.

    ``grid = (t_lo, t_hi, step)`` must contain 0.  The decay rates are read off
    the slope of the upper envelope of ``log ||X(t, s) P(s)||`` over the second
    half of the separations, reduced by ``margin``; the constants are the
    smallest values making every sampled pair satisfy the inequalities.
    The sampled grid and fitted slopes are returned in ``info``.
    """
    t_lo, t_hi, h = grid
    if not t_lo < 0 < t_hi:
        raise ValueError("estimation grid must contain t = 0 in its interior")
    Ap = as_matrix_poly(A)
    n = Ap.shape[0]
    k0 = int(round(-t_lo / h))
    edges = t_lo + h * np.arange(int(round((t_hi - t_lo) / h)) + 1)
    edges[k0] = 0.0
    guess = _default_guess(Ap) if P is None else np.atleast_2d(np.asarray(P, dtype=float))
    cache = CauchyCache(Ap, edges, rtol)
    proj = track_projections(cache.phi, cache.phi_inv, guess)
    P0 = proj[k0]
    r = int(round(np.trace(P0)))
    N = cache.cells
    dmax = N // 2
    I = np.eye(n)

    def envelope(step_mats, start_proj, direction):
        # V_d[s] = X(s + direction*d, s) Pi(s) for base points s with room for dmax steps
        if direction > 0:
            base = np.arange(0, N - dmax + 1)
        else:
            base = np.arange(dmax, N + 1)
        V = start_proj[base].copy()
        logs = [np.log(np.maximum(opnorm(V), 1e-300))]
        for d in range(1, dmax + 1):
            if direction > 0:
                k = base + d - 1
                V = proj[k + 1] @ step_mats[k] @ V
            else:
                k = base - d
                V = (I - proj[k]) @ step_mats[k] @ V
            logs.append(np.log(np.maximum(opnorm(V), 1e-300)))
        return np.array(logs)  # (dmax + 1, n_base)

    info = {"grid": [t_lo, t_hi, h], "margin": margin}
    K1 = K2 = 0.0
    s1 = s2 = 1.0
    d = h * np.arange(dmax + 1)
    half = dmax // 2
    for part in ("stable", "unstable"):
        if part == "stable" and r == 0 or part == "unstable" and r == n:
            continue
        if part == "stable":
            logs = envelope(cache.phi, proj, +1)
        else:
            logs = envelope(cache.phi_inv, I - proj, -1)
        M = logs.max(axis=1)
        rate = -(M[-1] - M[half]) / (d[-1] - d[half])
        info[f"{part}_rate"] = float(rate)
        if not np.isfinite(rate) or rate <= 1e-8:
            raise NoEnvelopeError(f"{part} part shows no exponential decay on the grid")
        sigma = (1.0 - margin) * rate
        K = float(np.exp(np.max(logs + sigma * d[:, None])))
        sigma = float(sigma)
        if part == "stable":
            K1, s1 = K, sigma
        else:
            K2, s2 = K, sigma
    return DichotomyData(P0, K1, s1, K2, s2, source="estimated", info=info)


def green(A, dich: DichotomyData, t, s, rtol=DEFAULT_RTOL):
    """``G(t, s) = X(t) P X^{-1}(s)`` for ``t >= s`` and ``X(t) (P - I) X^{-1}(s)`` for ``t < s``.

    Evaluated as ``X(t, s) P(s)`` with ``X(t, s)`` integrated directly from
    ``s`` to ``t`` and ``P(s) = X(s) P X(s)^{-1}``.
    """
    Ap = as_matrix_poly(A)
    n = Ap.shape[0]
    Xs = fundamental(Ap, s, rtol)
    cond = np.linalg.cond(Xs)
    if cond > COND_WARN:
        warnings.warn(f"fundamental matrix at s={s} is ill-conditioned (cond={cond:.2e})")
    Ps = Xs @ dich.P @ np.linalg.inv(Xs)
    Xts = fundamental(Ap, t, rtol, t0=s)
    if t >= s:
        return Xts @ Ps
    return Xts @ (Ps - np.eye(n))


# ---------------------------------------------------------------------------
# bounded solutions


class BoundedOperator:
    """Truncated bounded-solution operator ``F -> int G(t, s) F(s) ds`` on a cell grid.

    The integral over the window is evaluated as a forward recursion for the
    stable part (zero at the left edge) and a backward recursion for the
    unstable part (zero at the right edge); each cell contributes a Gauss
    quadrature of ``X(e_{k+1}, s) F(s)``.
    """

    def __init__(self, A, dich: DichotomyData, cells: Cells, rtol=DEFAULT_RTOL,
                 quad_order=DEFAULT_QUAD, cheb=DEFAULT_CHEB):
        self.cells = cells
        self.dich = dich
        self.cache = CauchyCache(A, cells.edges, rtol, quad_order, cheb)
        self.n = self.cache.n
        self.proj = track_projections(self.cache.phi, self.cache.phi_inv, dich.P)

    def solve_edges(self, w):
        """Edge values from the per-cell integrals ``w[k] = int_cell X(e_{k+1}, s) F(s) ds``."""
        C, n = w.shape
        P = self.proj
        I = np.eye(n)
        xs = np.zeros((C + 1, n))
        xu = np.zeros((C + 1, n))
        phi, phi_inv = self.cache.phi, self.cache.phi_inv
        for k in range(C):
            xs[k + 1] = P[k + 1] @ (phi[k] @ xs[k] + w[k])
        for k in range(C - 1, -1, -1):
            xu[k] = (I - P[k]) @ (phi_inv[k] @ (xu[k + 1] - (I - P[k + 1]) @ w[k]))
        return xs + xu

    def apply(self, forcing):
        """Edge values and dense samples for ``forcing(k, s) -> (len(s), n)``."""
        C = self.cache.cells
        F = np.empty((C, self.cache.quad_order, self.n))
        for k in range(C):
            F[k] = forcing(k, self.cache.quad_nodes[k])
        edges = self.solve_edges(self.cache.kernel_apply(F))
        dense = self.cache.dense(edges, forcing)
        return edges, dense


def _forcing_callable(f, n):
    if isinstance(f, TrigPolynomial):
        def fn(t):
            return np.asarray(f(t), dtype=float).reshape(np.size(t), n)
        return fn, f.sup_bound()
    return (lambda t: np.asarray(f(t), dtype=float).reshape(np.size(t), n)), None


def bounded_solution(A, dich: DichotomyData, f, core, theta: ThetaSequence | None = None,
                     tol=1e-8, t_cut=None, f_sup=None, rtol=DEFAULT_RTOL, max_cell=1.0):
    """Unique bounded solution of ``x' = A(t) x + f(t)`` on ``core``.

    ``f`` is a :class:`TrigPolynomial` or a vectorised callable, piecewise
    continuous with jumps only at points of ``theta`` (default: unit cells).
    The integral is truncated at ``t_cut`` beyond the core; the recorded
    ``tail_bound`` is ``||f|| (K1 e^{-sigma1 T}/sigma1 + K2 e^{-sigma2 T}/sigma2)``.
    """
    Ap = as_matrix_poly(A)
    n = Ap.shape[0]
    fn, bound = _forcing_callable(f, n)
    c_lo, c_hi = float(core[0]), float(core[1])
    if f_sup is None:
        if bound is None:
            t = np.linspace(c_lo - 50.0, c_hi + 50.0, 20001)
            bound = float(np.max(np.linalg.norm(fn(t), axis=1)))
        f_sup = bound
    if t_cut is None:
        t_cut = dich.cut_for(f_sup, tol / 10.0)
    tail = dich.tail_bound(f_sup, t_cut)
    if tail > tol:
        raise TruncationBudgetError(f"tail bound {tail:.3e} exceeds tol {tol:.3e} at t_cut={t_cut}")
    if theta is None:
        theta = ThetaSequence.uniform(1.0)
    from .timescale import beta as _beta
    i_lo = _beta(theta, c_lo - t_cut)
    i_hi = _beta(theta, c_hi + t_cut) + 1
    cells = build_cells(theta, i_lo, i_hi, max_cell)
    op = BoundedOperator(Ap, dich, cells, rtol)

    def forcing(k, s):
        return fn(s)

    edges, dense = op.apply(forcing)
    meta = {"tail_bound": tail, "t_cut": t_cut, "f_sup": f_sup}
    return GridSolution(cells, edges, dense, (c_lo, c_hi), meta)
