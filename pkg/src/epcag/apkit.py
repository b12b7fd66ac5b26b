"""Almost periodic building blocks.

Continuous almost periodic data (coefficients, forcings) are finite
trigonometric sums.  Discontinuous data are right-continuous piecewise
functions whose breakpoints form a switching sequence; they are compared in
the Bohr-Wexler sense, i.e. off small neighbourhoods of the breakpoints and
with the breakpoint sequences themselves required to be close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .timescale import (
    AlmostPeriodReport,
    ThetaSequence,
    _period_report,
    beta,
    eps_equivalent_sequences,
)

__all__ = [
    "TrigPolynomial",
    "PiecewiseFunction",
    "BWResult",
    "eval_trig",
    "translation_numbers",
    "step_compose",
    "bw_equivalent",
    "bw_translation_numbers",
]


def _norm(x):
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        return float(np.linalg.norm(x))
    return float(np.linalg.norm(x, 2))


class TrigPolynomial:
    """``const + sum_k (cos_k cos(omega_k t) + sin_k sin(omega_k t))``.

    Coefficients are scalars, vectors of length n or n-by-n matrices; all
    share one shape.
    """

    def __init__(self, const, terms=()):
        self.const = np.asarray(const, dtype=float)
        if self.const.ndim > 2:
            raise ValueError("coefficients must be scalars, vectors or matrices")
        omegas, cs, ss = [], [], []
        for omega, c, s in terms:
            c = np.broadcast_to(np.asarray(c, dtype=float), self.const.shape)
            s = np.broadcast_to(np.asarray(s, dtype=float), self.const.shape)
            omegas.append(float(omega))
            cs.append(c)
            ss.append(s)
        self.omegas = np.array(omegas, dtype=float)
        if np.any(self.omegas < 0):
            raise ValueError("frequencies must be non-negative")
        if len(set(omegas)) != len(omegas):
            raise ValueError("frequencies must be distinct")
        self.cos = np.array(cs, dtype=float).reshape((len(omegas),) + self.const.shape)
        self.sin = np.array(ss, dtype=float).reshape((len(omegas),) + self.const.shape)

    @property
    def shape(self):
        return self.const.shape

    @property
    def is_constant(self):
        if len(self.omegas) == 0:
            return True
        live = (self.omegas > 0) & (
            np.any(self.cos.reshape(len(self.omegas), -1) != 0, axis=1)
            | np.any(self.sin.reshape(len(self.omegas), -1) != 0, axis=1)
        )
        return not np.any(live)

    @classmethod
    def constant(cls, value):
        return cls(value)

    @classmethod
    def zeros(cls, shape=()):
        return cls(np.zeros(shape))

    @classmethod
    def from_descriptor(cls, desc, shape=None):
        """Build from ``{"const": ..., "terms": [{"omega", "cos", "sin"}]}`` or a bare array."""
        if isinstance(desc, dict):
            const = np.asarray(desc.get("const", 0.0), dtype=float)
            terms = [
                (t["omega"], t.get("cos", 0.0), t.get("sin", 0.0)) for t in desc.get("terms", [])
            ]
        else:
            const = np.asarray(desc, dtype=float)
            terms = []
        if shape is not None:
            const = np.broadcast_to(const, shape).copy()
        return cls(const, terms)

    def to_descriptor(self):
        return {
            "const": self.const.tolist(),
            "terms": [
                {"omega": float(w), "cos": c.tolist(), "sin": s.tolist()}
                for w, c, s in zip(self.omegas, self.cos, self.sin)
            ],
        }

    def __call__(self, t):
        tt = np.asarray(t, dtype=float)
        flat = tt.reshape(-1)
        out = np.broadcast_to(self.const, flat.shape + self.shape).copy()
        if self.omegas.size:
            arg = np.multiply.outer(flat, self.omegas)
            out += np.tensordot(np.cos(arg), self.cos, axes=(1, 0))
            out += np.tensordot(np.sin(arg), self.sin, axes=(1, 0))
        return out.reshape(tt.shape + self.shape)

    def antiderivative(self, t):
        """``int_0^t f(u) du`` in closed form."""
        tt = np.asarray(t, dtype=float)
        flat = tt.reshape(-1)
        out = np.multiply.outer(flat, self.const)
        for w, c, s in zip(self.omegas, self.cos, self.sin):
            if w == 0:
                out += np.multiply.outer(flat, c)
            else:
                out += np.multiply.outer(np.sin(w * flat) / w, c)
                out += np.multiply.outer((1.0 - np.cos(w * flat)) / w, s)
        return out.reshape(tt.shape + self.shape)

    def integral(self, t0, t1):
        return self.antiderivative(t1) - self.antiderivative(t0)

    def mean_value(self):
        """Bohr mean: the constant term plus any zero-frequency cosine part."""
        out = self.const.copy()
        for w, c in zip(self.omegas, self.cos):
            if w == 0:
                out = out + c
        return out

    def sup_bound(self):
        """Certified bound ``||const|| + sum_k (||cos_k|| + ||sin_k||)`` on the sup norm."""
        return _norm(self.const) + sum(_norm(c) + _norm(s) for c, s in zip(self.cos, self.sin))

    def sampled_sup(self, t_lo=-100.0, t_hi=100.0, per_unit=20):
        t = np.linspace(t_lo, t_hi, int((t_hi - t_lo) * per_unit) + 1)
        vals = self(t)
        if vals.ndim == 1:
            return float(np.max(np.abs(vals)))
        if vals.ndim == 2:
            return float(np.max(np.linalg.norm(vals, axis=1)))
        return float(max(np.linalg.norm(v, 2) for v in vals))

    def lower_bound(self):
        """Certified lower bound ``const - sum amplitudes`` for a scalar polynomial."""
        if self.shape != ():
            raise ValueError("lower_bound is defined for scalar polynomials")
        amp = sum(math.hypot(c, s) for w, c, s in zip(self.omegas, self.cos, self.sin) if w > 0)
        return float(self.mean_value()) - float(amp)

    def __repr__(self):
        return f"TrigPolynomial(shape={self.shape}, n_terms={self.omegas.size})"


def eval_trig(f: TrigPolynomial, t):
    return f(t)


def translation_numbers(
    f,
    eps,
    search_range=(0.0, 200.0),
    grid_step=0.01,
    taus=None,
    verify_window=(0.0, 200.0),
    per_unit=20,
    density_bound=None,
):
    """Grid ``tau`` with ``sup_t ||f(t + tau) - f(t)|| < eps`` over a sampled window.

    ``taus`` overrides the grid with explicit candidates.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if taus is None:
        taus = np.arange(search_range[0], search_range[1] + grid_step / 2, grid_step)
    taus = np.asarray(taus, dtype=float)
    t = np.linspace(verify_window[0], verify_window[1],
                    int((verify_window[1] - verify_window[0]) * per_unit) + 1)
    base = f(t)
    found = []
    for tau in taus:
        diff = f(t + tau) - base
        if diff.ndim == 1:
            sup = np.max(np.abs(diff))
        else:
            sup = np.max(np.sqrt(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))
        if sup < eps:
            found.append(float(tau))
    if density_bound is None:
        density_bound = max(grid_step, (taus.max() - taus.min()) / 4.0) if taus.size else 0.0
    window = (float(taus.min()), float(taus.max())) if taus.size else ()
    return _period_report(eps, found, window, float(density_bound))


class PiecewiseFunction:
    """Right-continuous function on ``[window[0], window[1]]`` with jumps only at ``breaks``.

    Parameters
    ----------
    breaks : array_like
        Sorted interior breakpoints.
    window : (float, float)
        Domain.
    levels : array_like, optional
        Constant value on each of the ``len(breaks) + 1`` pieces.
    piece : callable, optional
        ``piece(k, t)`` evaluates piece ``k`` at times ``t`` (vectorised).
    """

    def __init__(self, breaks, window, levels=None, piece=None):
        self.breaks = np.asarray(breaks, dtype=float).ravel()
        self.window = (float(window[0]), float(window[1]))
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if (levels is None) == (piece is None):
            raise ValueError("give exactly one of levels or piece")
        self.levels = None if levels is None else np.asarray(levels, dtype=float)
        if self.levels is not None and self.levels.shape[0] != self.breaks.size + 1:
            raise ValueError("need one level per piece")
        self.piece = piece

    @classmethod
    def continuous(cls, fn, window):
        return cls([], window, piece=lambda k, t: fn(t))

    def piece_index(self, t):
        return np.searchsorted(self.breaks, np.asarray(t, dtype=float), side="right")

    def __call__(self, t):
        tt = np.asarray(t, dtype=float)
        k = self.piece_index(tt)
        if self.levels is not None:
            return self.levels[k]
        flat_t, flat_k = tt.reshape(-1), k.reshape(-1)
        first = self.piece(int(flat_k[0]), flat_t[:1]) if flat_t.size else None
        if first is None:
            return np.zeros(tt.shape)
        out = np.empty((flat_t.size,) + np.shape(first)[1:])
        for kk in np.unique(flat_k):
            sel = flat_k == kk
            out[sel] = self.piece(int(kk), flat_t[sel])
        return out.reshape(tt.shape + out.shape[1:])

    def left_limit(self, t):
        """Value approached from the left, i.e. the piece ending at ``t``."""
        tt = np.asarray(t, dtype=float)
        k = np.searchsorted(self.breaks, tt, side="left")
        if self.levels is not None:
            return self.levels[k]
        return np.array([self.piece(int(kk), np.array([x]))[0] for kk, x in zip(k.ravel(), tt.ravel())])

    def shift(self, tau):
        """``t -> u(t + tau)``."""
        tau = float(tau)
        if self.levels is not None:
            return PiecewiseFunction(self.breaks - tau, (self.window[0] - tau, self.window[1] - tau),
                                     levels=self.levels)
        piece = self.piece
        return PiecewiseFunction(self.breaks - tau, (self.window[0] - tau, self.window[1] - tau),
                                 piece=lambda k, t: piece(k, t + tau))

    def sampled_sup(self, per_unit=32):
        lo, hi = self.window
        t = np.linspace(lo, hi, max(2, int((hi - lo) * per_unit) + 1))
        vals = self(t)
        return float(np.max(np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=1)))


def step_compose(f, seq: ThetaSequence, p=0, window=None, mode="node"):
    """Piecewise-constant right-continuous ``t -> f(theta_{beta(t) - p})``.

    ``mode="index"`` gives the literal reading ``t -> f(beta(t) - p)``.  ``f`` is
    a :class:`TrigPolynomial` or any vectorised callable.
    """
    if window is None:
        window = (seq.values[0], seq.values[-1])
    t_lo, t_hi = float(window[0]), float(window[1])
    i0 = beta(seq, t_lo)
    i1 = beta(seq, t_hi)
    idx = np.arange(i0, i1 + 1)
    breaks = seq.theta(idx[1:]) if idx.size > 1 else np.array([])
    src = idx - int(p)
    if mode == "node":
        arg = seq.theta(src)
    elif mode == "index":
        arg = src.astype(float)
    else:
        raise ValueError("mode must be 'node' or 'index'")
    levels = np.asarray(f(np.asarray(arg, dtype=float)), dtype=float)
    return PiecewiseFunction(breaks, (t_lo, t_hi), levels=levels)


@dataclass
class BWResult:
    equivalent: bool
    max_deviation: float
    sequences_equivalent: bool

    def __bool__(self):
        return self.equivalent


def _allowed_intervals(lo, hi, centers, eps):
    """Closed pieces of ``[lo, hi]`` outside every open ball ``(c - eps, c + eps)``."""
    out = []
    cur = lo
    for c in np.sort(centers):
        a, b = c - eps, c + eps
        if b <= cur:
            continue
        if a > hi:
            break
        if a >= cur:
            out.append((cur, min(a, hi)))
        cur = max(cur, b)
        if cur > hi:
            break
    if cur <= hi:
        out.append((cur, hi))
    return out


def bw_equivalent(u1: PiecewiseFunction, u2: PiecewiseFunction, eps, refine=32,
                  max_multiplicity=4):
    """Bohr-Wexler ``eps``-equivalence on the common window.

    True iff the breakpoint sequences are ``eps``-equivalent and
    ``||u1(t) - u2(t)|| < eps`` at every sampled ``t`` farther than ``eps``
    from all breakpoints of both functions.  Each allowed stretch is sampled
    with at least ``refine`` points and ``refine`` points per unit length.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    lo = max(u1.window[0], u2.window[0])
    hi = min(u1.window[1], u2.window[1])
    if hi <= lo:
        raise ValueError("functions have no common window")
    # a jump within eps of the window edge may have its partner just outside
    inner = (lo + eps, hi - eps) if hi - lo > 2 * eps else (lo, hi)
    seq_ok = eps_equivalent_sequences(
        u1.breaks, u2.breaks, eps, window=inner, max_multiplicity=max_multiplicity
    ).equivalent
    centers = np.concatenate([u1.breaks, u2.breaks])
    worst = 0.0
    for a, b in _allowed_intervals(lo, hi, centers, eps):
        n = max(refine, int(math.ceil((b - a) * refine)) + 1) if b > a else 1
        t = np.linspace(a, b, n)
        d = np.asarray(u1(t) - u2(t), dtype=float)
        dev = np.abs(d) if d.ndim == 1 else np.linalg.norm(d.reshape(d.shape[0], -1), axis=1)
        worst = max(worst, float(dev.max()))
    return BWResult(bool(seq_ok and worst < eps), worst, bool(seq_ok))


def bw_translation_numbers(u: PiecewiseFunction, eps, taus, refine=32, density_bound=None,
                           max_multiplicity=4):
    """Grid ``tau`` such that ``u(. + tau)`` is ``eps``-equivalent to ``u``."""
    taus = np.asarray(taus, dtype=float)
    found = []
    for tau in taus:
        if u.window[1] - u.window[0] <= abs(tau):
            continue
        if bw_equivalent(u.shift(tau), u, eps, refine, max_multiplicity).equivalent:
            found.append(float(tau))
    if density_bound is None:
        density_bound = max(float(np.min(np.diff(taus))) if taus.size > 1 else 0.0,
                            (taus.max() - taus.min()) / 4.0 if taus.size else 0.0)
    window = (float(taus.min()), float(taus.max())) if taus.size else ()
    return _period_report(eps, found, window, float(density_bound))
