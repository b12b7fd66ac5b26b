"""Switching sequences, the identification function and sequence diagnostics.

A switching sequence ``theta`` is strictly increasing and unbounded in both
directions.  Only a finite window of it is ever stored; sequences built from a
generator rule extend that window on demand.  Every almost-periodicity notion
implemented here is therefore a *window-relative* diagnostic, and each report
carries the window it was computed on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InsufficientWindowError, WindowExhaustedError

__all__ = [
    "ThetaSequence",
    "Representative",
    "AlmostPeriodReport",
    "EquipotentialReport",
    "GapStats",
    "Equivalence",
    "beta",
    "deviated_nodes",
    "tau_deviation",
    "gap_stats",
    "sequence_almost_periods",
    "equipotential_diagnostic",
    "eps_equivalent_sequences",
]

DEFAULT_MULTIPLICITY_CAP = 4


class ThetaSequence:
    """Finite window ``theta[base_index], ..., theta[base_index + len - 1]``.

    Parameters
    ----------
    values : array_like
        Strictly increasing time points of the stored window.
    base_index : int
        Index of ``values[0]``.
    generator : callable, optional
        Maps an integer index array to time points.  When present the window
        grows on demand; regenerating a stored index must reproduce it exactly.
    descriptor : dict, optional
        Problem-file descriptor the sequence was built from.
    """

    def __init__(self, values, base_index=0, generator=None, descriptor=None):
        vals = np.asarray(values, dtype=float).ravel()
        if vals.size < 2:
            raise ValueError("a switching sequence window needs at least two points")
        _check_increasing(vals)
        self._values = vals
        self.base_index = int(base_index)
        self.generator = generator
        self.descriptor = descriptor
        self.frozen = False

    # -- constructors -----------------------------------------------------
    @classmethod
    def uniform(cls, gap=1.0, offset=0.0, lo=-64, hi=64):
        """``theta_i = offset + i * gap``."""
        if not gap > 0:
            raise ValueError("uniform gap must be positive")
        gap, offset = float(gap), float(offset)

        def gen(idx):
            return offset + np.asarray(idx, dtype=float) * gap

        idx = np.arange(lo, hi + 1)
        return cls(gen(idx), lo, gen, {"kind": "uniform", "gap": gap, "offset": offset})

    @classmethod
    def perturbed(cls, amplitude, omega, lo=-64, hi=64):
        """``theta_i = i + amplitude * sin(omega * i)``."""
        amplitude, omega = float(amplitude), float(omega)
        # smallest possible gap is 1 - 2|A sin(w/2)|
        if 2.0 * abs(amplitude * math.sin(omega / 2.0)) >= 1.0:
            raise ValueError("perturbed sequence would not be strictly increasing")

        def gen(idx):
            i = np.asarray(idx, dtype=float)
            return i + amplitude * np.sin(omega * i)

        idx = np.arange(lo, hi + 1)
        desc = {"kind": "perturbed", "amplitude": amplitude, "omega": omega}
        return cls(gen(idx), lo, gen, desc)

    @classmethod
    def explicit(cls, values, base_index=0):
        vals = [float(v) for v in values]
        desc = {"kind": "explicit", "base_index": int(base_index), "values": vals}
        return cls(vals, base_index, None, desc)

    @classmethod
    def from_descriptor(cls, desc):
        kind = desc.get("kind")
        if kind == "uniform":
            return cls.uniform(desc.get("gap", 1.0), desc.get("offset", 0.0))
        if kind == "perturbed":
            return cls.perturbed(desc["amplitude"], desc["omega"])
        if kind == "explicit":
            return cls.explicit(desc["values"], desc.get("base_index", 0))
        raise ValueError(f"unknown sequence kind {kind!r}")

    # -- window management ------------------------------------------------
    @property
    def values(self):
        return self._values

    @property
    def first_index(self):
        return self.base_index

    @property
    def last_index(self):
        return self.base_index + self._values.size - 1

    def freeze(self):
        """Forbid further window growth; the object can then be shared read-only."""
        self.frozen = True
        return self

    def ensure(self, lo, hi):
        """Make indices ``lo..hi`` (inclusive) available."""
        lo, hi = int(lo), int(hi)
        if lo >= self.first_index and hi <= self.last_index:
            return
        if self.generator is None or self.frozen:
            raise WindowExhaustedError(
                f"indices [{lo}, {hi}] outside stored window "
                f"[{self.first_index}, {self.last_index}]"
            )
        new_lo = min(lo, self.first_index)
        new_hi = max(hi, self.last_index)
        vals = np.asarray(self.generator(np.arange(new_lo, new_hi + 1)), dtype=float)
        old = vals[self.first_index - new_lo : self.last_index - new_lo + 1]
        if not np.array_equal(old, self._values):
            raise RuntimeError("generator does not reproduce the stored window")
        _check_increasing(vals)
        self._values = vals
        self.base_index = new_lo

    def ensure_time(self, t_lo, t_hi):
        """Grow the window until ``theta_first <= t_lo`` and ``t_hi < theta_last``."""
        while self._values[0] > t_lo or self._values[-1] <= t_hi:
            if self.generator is None or self.frozen:
                raise WindowExhaustedError(
                    f"time range [{t_lo}, {t_hi}] outside stored window "
                    f"[{self._values[0]}, {self._values[-1]})"
                )
            span = self._values.size
            lo = self.first_index - (span if self._values[0] > t_lo else 0)
            hi = self.last_index + (span if self._values[-1] <= t_hi else 0)
            self.ensure(lo, hi)

    def theta(self, i):
        """Time point(s) ``theta_i`` for integer index or index array ``i``."""
        idx = np.asarray(i)
        if idx.size:
            self.ensure(idx.min(), idx.max())
        out = self._values[idx - self.base_index]
        return float(out) if np.ndim(out) == 0 else out

    def __getitem__(self, i):
        return self.theta(i)

    def indices_between(self, t_lo, t_hi):
        """Indices of stored points with ``t_lo <= theta_i <= t_hi``."""
        self.ensure_time(t_lo, t_hi)
        k0 = np.searchsorted(self._values, t_lo, side="left")
        k1 = np.searchsorted(self._values, t_hi, side="right")
        return np.arange(k0, k1) + self.base_index

    def __repr__(self):
        return (
            f"ThetaSequence(window=[{self.first_index}, {self.last_index}], "
            f"descriptor={self.descriptor!r})"
        )


def _check_increasing(vals):
    if not np.all(np.isfinite(vals)):
        raise ValueError("switching sequence contains non-finite values")
    if np.any(np.diff(vals) <= 0):
        raise ValueError("switching sequence must be strictly increasing")


@dataclass
class Representative:
    """Non-decreasing sequence whose values are points of a support sequence.

    ``entries`` holds ``(value, source_index)`` pairs; repeated source indices
    encode multiplicity.
    """

    entries: list

    @property
    def values(self):
        return np.array([v for v, _ in self.entries], dtype=float)

    @property
    def multiplicity(self):
        counts = {}
        for _, src in self.entries:
            counts[src] = counts.get(src, 0) + 1
        return max(counts.values()) if counts else 0

    def check(self, support: ThetaSequence | None = None):
        vals = self.values
        if np.any(np.diff(vals) < 0):
            raise ValueError("representative entries must be non-decreasing")
        if support is not None:
            for v, src in self.entries:
                if support.theta(src) != v:
                    raise ValueError(f"entry {v} is not theta_{src} of the support")
        return True


@dataclass
class AlmostPeriodReport:
    epsilon: float
    periods: list
    max_gap_between_periods: float
    relatively_dense_on_window: bool
    window: tuple = ()
    density_bound: float | None = None

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "periods": [float(p) if isinstance(p, float) else int(p) for p in self.periods],
            "max_gap_between_periods": _finite_or_none(self.max_gap_between_periods),
            "relatively_dense_on_window": bool(self.relatively_dense_on_window),
            "window": list(self.window),
            "density_bound": self.density_bound,
        }


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


def _period_report(eps, periods, window, density_bound):
    periods = sorted(periods)
    if len(periods) >= 2:
        gap = float(np.max(np.diff(periods)))
    else:
        gap = math.inf
    dense = bool(periods) and gap <= density_bound
    return AlmostPeriodReport(float(eps), periods, gap, dense, tuple(window), density_bound)


@dataclass
class EquipotentialReport:
    """Common almost periods of the difference sequences plus the set ``T_eps``."""

    common_periods: AlmostPeriodReport
    translation_set: AlmostPeriodReport
    q_set: list
    tau_intervals: list = field(default_factory=list)

    def contains_tau(self, tau):
        return any(lo < tau < hi for _, lo, hi in self.tau_intervals)

    def to_dict(self):
        return {
            "common_periods": self.common_periods.to_dict(),
            "translation_set": self.translation_set.to_dict(),
            "q_set": [int(q) for q in self.q_set],
            "tau_intervals": [[int(q), float(lo), float(hi)] for q, lo, hi in self.tau_intervals],
        }


@dataclass
class GapStats:
    min_gap: float
    max_gap: float
    n0: int


@dataclass
class Equivalence:
    equivalent: bool
    matching: list
    representatives: tuple = ()
    epsilon: float = 0.0
    window: tuple = ()

    def __bool__(self):
        return self.equivalent


# ---------------------------------------------------------------------------
# identification function


def beta(seq: ThetaSequence, t):
    """Index ``i`` with ``theta_i <= t < theta_{i+1}`` (vectorised over ``t``)."""
    tt = np.asarray(t, dtype=float)
    if tt.size == 0:
        return np.zeros(tt.shape, dtype=int)
    seq.ensure_time(float(tt.min()), float(tt.max()))
    idx = np.searchsorted(seq.values, tt, side="right") - 1 + seq.base_index
    return int(idx) if idx.ndim == 0 else idx


def deviated_nodes(seq: ThetaSequence, t, deviations: Sequence[int]):
    """``[theta_{beta(t) - p_j} for p_j in deviations]``; advanced (negative) p allowed."""
    i = beta(seq, float(t))
    return np.array([seq.theta(i - int(p)) for p in deviations], dtype=float)


def tau_deviation(seq: ThetaSequence, deviations: Iterable[int], window=None):
    """Largest lag ``sup_t (t - theta_{beta(t) - p_j})`` over the intervals of ``window``.

    ``window`` is an inclusive-exclusive range of interval indices ``(i_lo, i_hi)``;
    it defaults to the stored intervals that have full history.
    """
    devs = [int(p) for p in deviations]
    if not devs:
        raise ValueError("at least one deviation is required")
    if min(devs) < 0:
        raise ValueError("tau is defined for delays only (all p_j >= 0)")
    pmax = max(devs)
    if window is None:
        window = (seq.first_index + pmax, seq.last_index)
    i_lo, i_hi = int(window[0]), int(window[1])
    if i_hi <= i_lo:
        raise InsufficientWindowError("empty interval window")
    i = np.arange(i_lo, i_hi)
    right = seq.theta(i + 1)
    return float(max(np.max(right - seq.theta(i - p)) for p in devs))


def gap_stats(seq: ThetaSequence, window=None, l0=1.0):
    """Min gap, max gap and the largest number of points in a closed interval of length ``l0``.

    ``window`` is an inclusive index range ``(i_lo, i_hi)`` of points.
    """
    if window is None:
        window = (seq.first_index, seq.last_index)
    i_lo, i_hi = int(window[0]), int(window[1])
    if i_hi <= i_lo:
        raise InsufficientWindowError("gap statistics need at least two points")
    pts = seq.theta(np.arange(i_lo, i_hi + 1))
    gaps = np.diff(pts)
    # a maximal closed interval can be slid until its left end hits a point
    counts = np.searchsorted(pts, pts + l0 * (1 + 1e-12), side="right") - np.arange(pts.size)
    return GapStats(float(gaps.min()), float(gaps.max()), int(counts.max()))


# ---------------------------------------------------------------------------
# almost periods of sequences


def _seq_norm(diff):
    if diff.ndim == 1:
        return np.abs(diff)
    return np.linalg.norm(diff.reshape(diff.shape[0], -1), axis=1)


def _default_bound(p_values):
    span = max(p_values) - min(p_values)
    return max(1.0, span / 4.0)


def sequence_almost_periods(a, eps, p_range, index_offset=0, density_bound=None):
    """Integer ``p`` in ``p_range`` with ``||a_{i+p} - a_i|| < eps`` for every testable ``i``.

    ``a`` holds the window ``a[index_offset], a[index_offset + 1], ...``.
    Raises :class:`InsufficientWindowError` if some ``p`` has no testable ``i``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    arr = np.asarray(a, dtype=float)
    n = arr.shape[0]
    ps = [int(p) for p in p_range]
    if not ps:
        raise InsufficientWindowError("empty period range")
    found = []
    for p in ps:
        q = abs(p)
        if q >= n:
            raise InsufficientWindowError(f"no testable index for p={p} on a window of {n}")
        if q == 0 or np.max(_seq_norm(arr[q:] - arr[: n - q])) < eps:
            found.append(p)
    bound = _default_bound(ps) if density_bound is None else float(density_bound)
    window = (int(index_offset), int(index_offset) + n - 1)
    return _period_report(eps, found, window, bound)


def _gamma_values(seq):
    if isinstance(seq, Representative):
        return seq.values, 0
    return seq.values, seq.base_index


def _difference_sup(g, j, p):
    """``max_i |gamma^j_{i+p} - gamma^j_i|`` over indices inside the window, or None."""
    n = g.size
    lo = max(0, -j, -p, -j - p)
    hi = n - max(0, j, p, j + p)
    if hi <= lo:
        return None
    i = np.arange(lo, hi)
    d = g[i + p + j] - g[i + p] - g[i + j] + g[i]
    return float(np.max(np.abs(d)))


def equipotential_diagnostic(
    seq,
    eps,
    j_range,
    p_range,
    q_range=None,
    tau_range=None,
    density_bound=None,
    tau_density_bound=None,
):
    """Window evidence for equipotential almost periodicity of ``gamma^j``.

    Returns the integers ``p`` that are ``eps``-almost periods of every
    ``gamma^j`` (``j`` in ``j_range``) simultaneously, and the set ``T_eps`` of
    reals ``tau`` having some ``q`` with ``|gamma^q_i - tau| < eps`` for all
    testable ``i``.  ``T_eps`` is reported exactly as open intervals per ``q``
    and sampled on a grid of step ``eps / 4``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g, offset = _gamma_values(seq)
    js = [int(j) for j in j_range]
    ps = [int(p) for p in p_range]
    common = []
    for p in ps:
        ok = True
        for j in js:
            sup = _difference_sup(g, j, p)
            if sup is None:
                raise InsufficientWindowError(f"window too short for j={j}, p={p}")
            if sup >= eps:
                ok = False
                break
        if ok:
            common.append(p)
    window = (offset, offset + g.size - 1)
    bound = _default_bound(ps) if density_bound is None else float(density_bound)
    common_report = _period_report(eps, common, window, bound)

    qs = ps if q_range is None else [int(q) for q in q_range]
    intervals = []
    n = g.size
    for q in qs:
        if abs(q) >= n:
            raise InsufficientWindowError(f"window too short for q={q}")
        i = np.arange(max(0, -q), n - max(0, q))
        gq = g[i + q] - g[i]
        lo, hi = float(gq.max() - eps), float(gq.min() + eps)
        if lo < hi:
            intervals.append((q, lo, hi))
    if tau_range is None:
        if intervals:
            tau_range = (min(iv[1] for iv in intervals), max(iv[2] for iv in intervals))
        else:
            tau_range = (0.0, 0.0)
    step = eps / 4.0
    grid = np.arange(tau_range[0], tau_range[1] + step / 2, step)
    inside = np.zeros(grid.shape, dtype=bool)
    for _, lo, hi in intervals:
        inside |= (grid > lo) & (grid < hi)
    taus = [float(x) for x in grid[inside]]
    if tau_density_bound is None:
        tau_density_bound = max(step, (tau_range[1] - tau_range[0]) / 4.0)
    tau_report = _period_report(eps, taus, tuple(tau_range), float(tau_density_bound))
    return EquipotentialReport(common_report, tau_report, [q for q, _, _ in intervals], intervals)


# ---------------------------------------------------------------------------
# eps-equivalence of sequences by monotone alignment


def _as_points(s):
    if isinstance(s, ThetaSequence):
        return s.values, s.base_index
    return np.asarray(s, dtype=float), 0


def eps_equivalent_sequences(a, b, eps, window=None, max_multiplicity=DEFAULT_MULTIPLICITY_CAP):
    """Decide whether two sequences are ``eps``-equivalent on a time window.

    Searches, by dynamic programming, for a monotone many-to-many alignment
    (steps (1,0), (0,1), (1,1)) that covers every point of both sequences lying
    in ``window`` and pairs points at distance ``< eps``.  Points within
    ``eps`` outside the window may be used but are not required.  Each point
    may be repeated at most ``max_multiplicity`` times (``None``: unbounded).

    Returns an :class:`Equivalence` whose ``matching`` lists
    ``(index_in_a, index_in_b)`` pairs in sequence-index terms.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    av, aoff = _as_points(a)
    bv, boff = _as_points(b)
    if window is None:
        window = (max(av[0], bv[0]), min(av[-1], bv[-1]))
    t_lo, t_hi = float(window[0]), float(window[1])
    cap = math.inf if max_multiplicity is None else int(max_multiplicity)

    def restrict(v):
        k0 = np.searchsorted(v, t_lo - eps, side="right")
        k1 = np.searchsorted(v, t_hi + eps, side="left")
        pts = v[k0:k1]
        req = np.nonzero((pts >= t_lo) & (pts <= t_hi))[0]
        return pts, k0, req

    A, a0, ra = restrict(av)
    B, b0, rb = restrict(bv)
    result = Equivalence(False, [], (), float(eps), (t_lo, t_hi))
    if ra.size == 0 and rb.size == 0:
        result.equivalent = True
        return result
    if A.size == 0 or B.size == 0:
        return result
    fa = ra[0] if ra.size else A.size - 1
    la = ra[-1] if ra.size else 0
    fb = rb[0] if rb.size else B.size - 1
    lb = rb[-1] if rb.size else 0

    # state (i, j, ca, cb): pair (A_i, B_j) is on the path, A_i used ca times, B_j cb times
    pred = {}
    frontier = {}
    end_state = None
    for i in range(A.size):
        j_lo = np.searchsorted(B, A[i] - eps, side="right")
        j_hi = np.searchsorted(B, A[i] + eps, side="left")
        for j in range(j_lo, j_hi):
            states = {}
            if i <= fa and j <= fb:
                states[(1, 1)] = None
            for (ca, cb) in frontier.get((i - 1, j - 1), ()):
                states.setdefault((1, 1), (i - 1, j - 1, ca, cb))
            for (ca, cb) in frontier.get((i - 1, j), ()):
                if cb + 1 <= cap:
                    states.setdefault((1, cb + 1), (i - 1, j, ca, cb))
            for (ca, cb) in frontier.get((i, j - 1), ()):
                if ca + 1 <= cap:
                    states.setdefault((ca + 1, 1), (i, j - 1, ca, cb))
            if not states:
                continue
            if cap == math.inf:
                # counts are irrelevant without a cap: keep one state
                key = next(iter(states))
                states = {(1, 1): states[key]}
            else:
                states = _pareto(states)
            frontier[(i, j)] = states
            for s, p in states.items():
                pred[(i, j) + s] = p
            if end_state is None and i >= la and j >= lb:
                end_state = (i, j) + next(iter(states))
        if end_state is not None:
            break
    if end_state is None:
        return result
    path = []
    node = end_state
    while node is not None:
        path.append((node[0], node[1]))
        node = pred[node]
    path.reverse()
    matching = [(int(i + a0 + aoff), int(j + b0 + boff)) for i, j in path]
    rep_a = Representative([(float(A[i]), int(i + a0 + aoff)) for i, _ in path])
    rep_b = Representative([(float(B[j]), int(j + b0 + boff)) for _, j in path])
    result.equivalent = True
    result.matching = matching
    result.representatives = (rep_a, rep_b)
    return result


def _pareto(states):
    keys = list(states)
    keep = {}
    for k in keys:
        dominated = any(o != k and o[0] <= k[0] and o[1] <= k[1] for o in keys)
        if not dominated:
            keep[k] = states[k]
    return keep
