"""Piecewise-smooth solution container on a window of the switching sequence.

The window is split into *cells*: the switching intervals ``[theta_i, theta_{i+1})``,
each possibly subdivided when it is long.  A solution stores its value at
every cell edge plus samples at the Chebyshev points of every cell and is
evaluated between samples by barycentric interpolation, which is spectrally
accurate because the solution is smooth inside each switching interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import WindowExhaustedError
from .timescale import ThetaSequence

__all__ = ["GridSolution", "Cells", "build_cells", "cheb_points", "DEFAULT_CHEB"]

DEFAULT_CHEB = 17


def cheb_points(R=DEFAULT_CHEB):
    """Chebyshev points of the second kind on [-1, 1], ascending, with barycentric weights."""
    j = np.arange(R)
    x = -np.cos(np.pi * j / (R - 1))
    w = (-1.0) ** j
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


@dataclass
class Cells:
    """Cell decomposition of the window ``[theta_lo, theta_hi]``."""

    edges: np.ndarray
    interval: np.ndarray
    theta_lo: int
    node_edges: np.ndarray

    @property
    def count(self):
        return self.edges.size - 1

    @property
    def theta_hi(self):
        return self.theta_lo + self.node_edges.size - 1


def build_cells(seq: ThetaSequence, i_lo, i_hi, max_cell=1.0):
    """Cells covering ``[theta_{i_lo}, theta_{i_hi}]``; intervals longer than ``max_cell`` are split."""
    nodes = seq.theta(np.arange(i_lo, i_hi + 1))
    edges = [nodes[0]]
    interval = []
    node_edges = [0]
    for k in range(nodes.size - 1):
        a, b = nodes[k], nodes[k + 1]
        parts = max(1, int(math.ceil((b - a) / max_cell - 1e-12)))
        for q in range(1, parts):
            edges.append(a + (b - a) * q / parts)
            interval.append(i_lo + k)
        edges.append(b)
        interval.append(i_lo + k)
        node_edges.append(len(edges) - 1)
    return Cells(np.array(edges), np.array(interval, dtype=int), int(i_lo),
                 np.array(node_edges, dtype=int))


@dataclass
class GridSolution:
    cells: Cells
    edge_values: np.ndarray
    dense: np.ndarray
    core: tuple
    meta: dict = field(default_factory=dict)

    # -- shape ------------------------------------------------------------
    @property
    def dim(self):
        return self.edge_values.shape[1]

    @property
    def edges(self):
        return self.cells.edges

    @property
    def window(self):
        return float(self.cells.edges[0]), float(self.cells.edges[-1])

    @property
    def cheb_order(self):
        return self.dense.shape[1]

    @property
    def node_values(self):
        return self.edge_values[self.cells.node_edges]

    @property
    def node_times(self):
        return self.cells.edges[self.cells.node_edges]

    def node_value(self, i, clamp=True):
        """``x(theta_i)``; indices beyond the window are clamped to the nearest node."""
        k = int(i) - self.cells.theta_lo
        last = self.cells.node_edges.size - 1
        if not 0 <= k <= last:
            if not clamp:
                raise WindowExhaustedError(f"node {i} outside solution window")
            k = min(max(k, 0), last)
        return self.edge_values[self.cells.node_edges[k]]

    # -- evaluation -------------------------------------------------------
    def cell_of(self, t):
        k = np.searchsorted(self.cells.edges, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(k, 0, self.cells.count - 1)

    def __call__(self, t):
        tt = np.asarray(t, dtype=float)
        flat = tt.reshape(-1)
        lo, hi = self.window
        if flat.size and (flat.min() < lo - 1e-12 or flat.max() > hi + 1e-12):
            raise WindowExhaustedError(f"t outside solution window [{lo}, {hi}]")
        k = self.cell_of(flat)
        a = self.cells.edges[k]
        b = self.cells.edges[k + 1]
        x = 2.0 * (flat - a) / (b - a) - 1.0
        nodes, w = cheb_points(self.cheb_order)
        diff = x[:, None] - nodes[None, :]
        exact = np.abs(diff) < 1e-15
        diff[exact] = 1.0
        c = w[None, :] / diff
        vals = self.dense[k]  # (N, R, n)
        out = np.einsum("nr,nrd->nd", c, vals) / c.sum(axis=1)[:, None]
        hit = exact.any(axis=1)
        if hit.any():
            r = np.argmax(exact[hit], axis=1)
            out[hit] = vals[hit, r]
        return out.reshape(tt.shape + (self.dim,))

    def sample(self, core_only=True):
        """Times, values and switching-interval index of every stored sample."""
        R = self.cheb_order
        nodes, _ = cheb_points(R)
        a = self.cells.edges[:-1, None]
        b = self.cells.edges[1:, None]
        t = a + (b - a) * (nodes[None, :-1] + 1.0) / 2.0
        x = self.dense[:, :-1, :]
        idx = np.repeat(self.cells.interval[:, None], R - 1, axis=1)
        t = np.concatenate([t.ravel(), self.cells.edges[-1:]])
        x = np.concatenate([x.reshape(-1, self.dim), self.edge_values[-1:]])
        idx = np.concatenate([idx.ravel(), [self.cells.interval[-1] + 1]])
        if core_only:
            sel = (t >= self.core[0] - 1e-12) & (t <= self.core[1] + 1e-12)
            t, x, idx = t[sel], x[sel], idx[sel]
        return t, x, idx

    def sup_norm(self, core_only=True):
        _, x, _ = self.sample(core_only)
        return float(np.max(np.linalg.norm(x, axis=1))) if x.size else 0.0

    # -- construction -----------------------------------------------------
    @classmethod
    def from_function(cls, fn, seq: ThetaSequence, i_lo, i_hi, core=None, R=DEFAULT_CHEB,
                      max_cell=1.0):
        """Sample a vectorised ``fn(t) -> (len(t), n)`` on the cells of ``[theta_{i_lo}, theta_{i_hi}]``."""
        cells = build_cells(seq, i_lo, i_hi, max_cell)
        nodes, _ = cheb_points(R)
        a = cells.edges[:-1, None]
        b = cells.edges[1:, None]
        t = a + (b - a) * (nodes[None, :] + 1.0) / 2.0
        vals = np.asarray(fn(t.ravel()), dtype=float).reshape(t.shape + (-1,))
        edge_vals = np.concatenate([vals[:, 0, :], vals[-1:, -1, :]])
        if core is None:
            core = (float(cells.edges[0]), float(cells.edges[-1]))
        return cls(cells, edge_vals, vals, tuple(core))
