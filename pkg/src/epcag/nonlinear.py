"""Declarative catalog of nonlinearities ``f(t, z_1, ..., z_m)``.

Every entry carries a certified Lipschitz constant ``l`` in the sense

    ||f(t, z) - f(t, z')|| <= l * sum_j ||z_j - z'_j||.

Affine and saturated forms split as ``f = h(z) + g(t)`` where ``g`` is a
trig polynomial; this is what lets the fixed-point solver work on node
values only.  The product-logistic form also reads the current state
``z_0 = x(t)`` and is used by the scalar logistic equation.
"""

from __future__ import annotations

import numpy as np

from .apkit import TrigPolynomial

__all__ = [
    "Nonlinearity",
    "Affine",
    "Saturated",
    "ProductLogistic",
    "ScalarLaw",
    "nonlinearity_from_descriptor",
    "secant_check",
]


def _coeffs(C, n):
    mats = []
    for c in C:
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            c = c * np.eye(n)
        if c.shape != (n, n):
            raise ValueError(f"coefficient matrices must be {n}x{n}")
        mats.append(c)
    if not mats:
        raise ValueError("at least one deviation coefficient is required")
    return np.array(mats)


class Nonlinearity:
    """Base class; subclasses define ``node_term`` and ``kind``."""

    kind = "abstract"
    separable = True
    uses_state = False

    def __init__(self, n, m, g=None):
        self.n = int(n)
        self.m = int(m)
        self.g = g if g is not None else TrigPolynomial(np.zeros(self.n))

    @property
    def lipschitz(self):
        raise NotImplementedError

    def node_term(self, z):
        """The part of ``f`` that depends on the node arguments; ``z`` has shape (..., m, n)."""
        raise NotImplementedError

    def __call__(self, t, z, x=None):
        z = np.asarray(z, dtype=float)
        return self.node_term(z) + self.g(t)

    def forcing_sup(self):
        return self.g.sup_bound()

    def zero_value_bound(self):
        """Bound on ``sup_t ||f(t, 0, ..., 0)||``."""
        return float(np.linalg.norm(self.node_term(np.zeros((self.m, self.n))))) + self.forcing_sup()


class Affine(Nonlinearity):
    """``f = sum_j C_j z_j + g(t)`` with ``l = sum_j ||C_j||``."""

    kind = "affine"

    def __init__(self, C, g=None, n=None):
        C = list(C)
        n = n if n is not None else np.atleast_2d(np.asarray(C[0], dtype=float)).shape[0]
        self.C = _coeffs(C, n)
        super().__init__(n, len(C), g)

    @property
    def lipschitz(self):
        return float(sum(np.linalg.norm(c, 2) for c in self.C))

    def node_term(self, z):
        return np.einsum("jab,...jb->...a", self.C, z)

    def to_descriptor(self):
        return {"kind": self.kind, "C": self.C.tolist(), "g": self.g.to_descriptor()}


class Saturated(Affine):
    """``f = sum_j C_j tanh(z_j) + g(t)``; tanh is 1-Lipschitz so ``l = sum_j ||C_j||``."""

    kind = "saturated"

    def node_term(self, z):
        return np.einsum("jab,...jb->...a", self.C, np.tanh(z))


class ScalarLaw:
    """Scalar law ``h(z_1, ..., z_m)`` used inside the product-logistic form.

    kinds: ``affine`` (``sum c_j z_j``), ``monomial`` (``c prod z_j``),
    ``saturated`` (``sum c_j tanh z_j``).
    """

    def __init__(self, kind, c, m=None):
        self.kind = kind
        if kind == "monomial":
            self.c = float(np.asarray(c, dtype=float).ravel()[0])
            if m is None:
                raise ValueError("monomial law needs the number of arguments")
            self.m = int(m)
        elif kind in ("affine", "saturated"):
            self.c = np.atleast_1d(np.asarray(c, dtype=float))
            self.m = self.c.size
        else:
            raise ValueError(f"unknown scalar law {kind!r}")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "affine":
            return z @ self.c
        if self.kind == "saturated":
            return np.tanh(z) @ self.c
        return self.c * np.prod(z, axis=-1)

    def lipschitz(self, H):
        """Lipschitz constant on the box ``[0, H]^m``."""
        if self.kind == "monomial":
            return abs(self.c) * H ** (self.m - 1)
        return float(np.max(np.abs(self.c)))

    def is_monotone_nondecreasing(self):
        if self.kind == "monomial":
            return self.c >= 0
        return bool(np.all(self.c >= 0))

    def to_descriptor(self):
        c = self.c.tolist() if isinstance(self.c, np.ndarray) else self.c
        d = {"kind": self.kind, "c": c}
        if self.kind == "monomial":
            d["m"] = self.m
        return d


class ProductLogistic(Nonlinearity):
    """``f = scale * z_0 * h(z_1, ..., z_m)`` for scalar states, with ``z_0 = x(t)``.

    The Lipschitz constant refers to the box ``[0, H]^{m+1}`` and is
    ``|scale| * (l_h H + sup |h|)``.
    """

    kind = "product_logistic"
    separable = False
    uses_state = True

    def __init__(self, law: ScalarLaw, scale=1.0, H=1.0):
        self.law = law
        self.scale = float(scale)
        self.H = float(H)
        super().__init__(1, law.m)

    @property
    def lipschitz(self):
        return abs(self.scale) * (self.law.lipschitz(self.H) * self.H + self.law_sup())

    def law_sup(self):
        corners = np.array(np.meshgrid(*[[0.0, self.H]] * self.m)).reshape(self.m, -1).T
        return float(np.max(np.abs(self.law(corners)))) if self.law.kind != "saturated" else \
            float(np.sum(np.abs(self.law.c)) * np.tanh(self.H))

    def node_term(self, z):
        raise TypeError("product-logistic nonlinearity depends on the current state")

    def rate(self, z):
        """``scale * h(z)``: the frozen growth-rate contribution on one interval."""
        return self.scale * self.law(np.asarray(z, dtype=float).reshape(-1, self.m))

    def __call__(self, t, z, x=None):
        if x is None:
            raise ValueError("product-logistic nonlinearity needs the current state x")
        z = np.asarray(z, dtype=float)
        h = self.law(z[..., 0])
        return (self.scale * np.asarray(x, dtype=float)[..., 0] * h)[..., None]

    def zero_value_bound(self):
        return 0.0

    def to_descriptor(self):
        return {"kind": self.kind, "scale": self.scale, "h": self.law.to_descriptor()}


def nonlinearity_from_descriptor(desc, n, m, H=1.0):
    """Build a catalog entry from its problem-file descriptor.

    ``{"kind": "affine" | "saturated", "C": [C_1, ..., C_m], "g": trig}``;
    ``{"kind": "product_logistic", "scale": s, "h": {"kind", "c"}}``.
    """
    kind = desc["kind"]
    if kind in ("affine", "saturated"):
        g = TrigPolynomial.from_descriptor(desc.get("g", 0.0), shape=(n,))
        C = desc["C"]
        if len(C) != m:
            raise ValueError(f"expected {m} coefficient matrices, got {len(C)}")
        cls = Affine if kind == "affine" else Saturated
        return cls(C, g, n=n)
    if kind == "product_logistic":
        if n != 1:
            raise ValueError("product-logistic nonlinearity is scalar only")
        h = desc["h"]
        law = ScalarLaw(h["kind"], h["c"], m=h.get("m", m))
        if law.m != m:
            raise ValueError(f"law has {law.m} arguments, expected {m}")
        return ProductLogistic(law, desc.get("scale", 1.0), H)
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


def secant_check(f: Nonlinearity, rng=None, samples=2000, radius=3.0):
    """Largest observed ``||f(z) - f(z')|| / sum_j ||z_j - z'_j||`` over random pairs.

    Pairs are drawn in the cube of half-width ``radius`` (in ``[0, H]`` for the
    product form).  A value above ``f.lipschitz`` falsifies the constant.
    """
    rng = np.random.default_rng(rng)
    t = rng.uniform(-50.0, 50.0, samples)
    if isinstance(f, ProductLogistic):
        lo, hi = 0.0, f.H
        z1 = rng.uniform(lo, hi, (samples, f.m + 1, 1))
        z2 = rng.uniform(lo, hi, (samples, f.m + 1, 1))
        v1 = f(t, z1[:, 1:], z1[:, 0])
        v2 = f(t, z2[:, 1:], z2[:, 0])
    else:
        z1 = rng.uniform(-radius, radius, (samples, f.m, f.n))
        z2 = z1 + rng.normal(scale=rng.uniform(1e-3, radius, (samples, 1, 1)), size=z1.shape)
        v1 = f(t, z1)
        v2 = f(t, z2)
    num = np.linalg.norm(v1 - v2, axis=-1)
    den = np.linalg.norm(z1 - z2, axis=-1).sum(axis=-1)
    return float(np.max(num / den))
