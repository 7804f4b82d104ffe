"""Reference finite element spaces.

All bases are modal: products of orthonormal shifted Legendre polynomials
``l_a(x) = sqrt(2a + 1) P_a(2x - 1)`` on ``[0, 1]``.  Since the HDG scheme
never enforces inter-cell continuity through degrees of freedom, any basis
of the local space will do.

* ``ScalarQ(k)``: ``l_a(x) l_b(y)`` with ``a, b <= k``.
* ``ScalarP(k)``: ``l_a(x) l_b(y)`` with ``a + b <= k``.  This spans the
  total-degree space on either reference cell.
* ``RT(k)``: ``Q_{k+1,k} x {0}`` followed by ``{0} x Q_{k,k+1}``.
* ``BDM(k)``: ``[P_k]^2`` followed by ``curl(l_{k+1}(x) l_1(y))`` and
  ``curl(l_1(x) l_{k+1}(y))``, with ``curl(phi) = (d_y phi, -d_x phi)``.
* ``VectorQ(k)``, ``VectorP(k)``: componentwise copies of the scalar bases.
* ``FacetQ(k)`` (= ``FacetP(k)``): ``l_a(s)``, ``a <= k`` on ``[0, 1]``.

The first function of every scalar basis is the constant 1.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L

from .errors import InvalidArgumentError

VECTOR_FAMILIES = ("RT", "BDM", "VectorQ", "VectorP")
SCALAR_FAMILIES = ("ScalarQ", "ScalarP")
FACET_FAMILIES = ("FacetQ", "FacetP")

# (start vertex, end vertex, outward unit normal); traversal is counterclockwise
REFERENCE_FACETS = {
    "quad": (
        ((0.0, 0.0), (1.0, 0.0), (0.0, -1.0)),
        ((1.0, 0.0), (1.0, 1.0), (1.0, 0.0)),
        ((1.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
        ((0.0, 1.0), (0.0, 0.0), (-1.0, 0.0)),
    ),
    "triangle": (
        ((0.0, 0.0), (1.0, 0.0), (0.0, -1.0)),
        ((1.0, 0.0), (0.0, 1.0), (np.sqrt(0.5), np.sqrt(0.5))),
        ((0.0, 1.0), (0.0, 0.0), (-1.0, 0.0)),
    ),
}

REFERENCE_MEASURE = {"quad": 1.0, "triangle": 0.5}

# shapes each family can be tabulated on
_SHAPES = {
    "RT": ("quad",),
    "BDM": ("quad",),
    "VectorQ": ("quad",),
    "ScalarQ": ("quad",),
    "VectorP": ("quad", "triangle"),
    "ScalarP": ("quad", "triangle"),
    "FacetQ": ("interval",),
    "FacetP": ("interval",),
}


@dataclass(frozen=True)
class SpaceId:
    family: str
    k: int

    def __post_init__(self):
        if self.family not in _SHAPES:
            raise InvalidArgumentError(f"unknown space family {self.family!r}")
        if self.k < 0:
            raise InvalidArgumentError("space degree must be non-negative")

    @property
    def is_vector(self):
        return self.family in VECTOR_FAMILIES

    @property
    def is_facet(self):
        return self.family in FACET_FAMILIES

    def supports(self, shape):
        return shape in _SHAPES[self.family]

    def __str__(self):
        return f"{self.family}({self.k})"


def RT(k):
    return SpaceId("RT", k)


def BDM(k):
    return SpaceId("BDM", k)


def VectorQ(k):
    return SpaceId("VectorQ", k)


def VectorP(k):
    return SpaceId("VectorP", k)


def ScalarQ(k):
    return SpaceId("ScalarQ", k)


def ScalarP(k):
    return SpaceId("ScalarP", k)


def FacetQ(k):
    return SpaceId("FacetQ", k)


def FacetP(k):
    return SpaceId("FacetP", k)


@dataclass(frozen=True)
class BasisTable:
    values: np.ndarray  # (npts, nbasis, ncomp)
    ref_gradients: np.ndarray  # (npts, nbasis, ncomp, dim)
    ref_divergence: np.ndarray | None = None  # (npts, nbasis), vector spaces only

    @property
    def nbasis(self):
        return self.values.shape[1]

    @property
    def scalar(self):
        return self.values[..., 0]


def space_dimension(space):
    k = space.k
    fam = space.family
    if fam == "RT":
        return 2 * (k + 1) * (k + 2)
    if fam == "BDM":
        return (k + 1) * (k + 2) + 2
    if fam == "VectorQ":
        return 2 * (k + 1) ** 2
    if fam == "VectorP":
        return (k + 1) * (k + 2)
    if fam == "ScalarQ":
        return (k + 1) ** 2
    if fam == "ScalarP":
        return (k + 1) * (k + 2) // 2
    return k + 1


def _scale(n):
    return np.sqrt(2.0 * np.arange(n) + 1.0)


def _tensor_coeffs(a, b, size):
    c = np.zeros((size, size))
    c[a, b] = np.sqrt((2 * a + 1) * (2 * b + 1))
    return c


@lru_cache(maxsize=None)
def _coefficients(space):
    """Legendre-coefficient representation ``[(c_x, c_y), ...]`` of a basis."""
    k = space.k
    fam = space.family
    size = k + 3
    zero = np.zeros((size, size))
    if fam == "ScalarQ":
        return [(_tensor_coeffs(a, b, size),) for a in range(k + 1) for b in range(k + 1)]
    if fam == "ScalarP":
        return [(_tensor_coeffs(a, d - a, size),) for d in range(k + 1) for a in range(d, -1, -1)]
    if fam == "VectorQ":
        scal = _coefficients(ScalarQ(k))
        return [(c, zero) for (c,) in scal] + [(zero, c) for (c,) in scal]
    if fam in ("VectorP", "BDM"):
        scal = _coefficients(ScalarP(k))
        out = [(c, zero) for (c,) in scal] + [(zero, c) for (c,) in scal]
        if fam == "BDM":
            for a, b in ((k + 1, 1), (1, k + 1)):
                phi = _tensor_coeffs(a, b, size)
                # d/dx on [0, 1] is twice the Legendre derivative on [-1, 1]
                dx = np.zeros((size, size))
                dy = np.zeros((size, size))
                dphi_x = 2.0 * L.legder(phi, axis=0)
                dphi_y = 2.0 * L.legder(phi, axis=1)
                dx[: dphi_x.shape[0], :] = dphi_x
                dy[:, : dphi_y.shape[1]] = dphi_y
                out.append((dy, -dx))
        return out
    if fam == "RT":
        first = [(_tensor_coeffs(a, b, size), zero) for a in range(k + 2) for b in range(k + 1)]
        second = [(zero, _tensor_coeffs(a, b, size)) for a in range(k + 1) for b in range(k + 2)]
        return first + second
    raise InvalidArgumentError(f"no cell basis for {space}")


def _eval2d(c, x, y):
    gx = 2.0 * L.legder(c, axis=0)
    gy = 2.0 * L.legder(c, axis=1)
    xs, ys = 2.0 * x - 1.0, 2.0 * y - 1.0
    return L.legval2d(xs, ys, c), L.legval2d(xs, ys, gx), L.legval2d(xs, ys, gy)


def _tabulate_facet(space, s):
    n = space.k + 1
    s = np.asarray(s, dtype=float).reshape(-1)
    sc = _scale(n)
    vals = L.legvander(2.0 * s - 1.0, space.k) * sc
    # derivative of each basis function
    der = np.zeros_like(vals)
    for a in range(1, n):
        c = np.zeros(n)
        c[a] = sc[a]
        der[:, a] = 2.0 * L.legval(2.0 * s - 1.0, L.legder(c))
    return BasisTable(vals[:, :, None], der[:, :, None, None])


def tabulate(space, points, shape="quad"):
    """Tabulate values and reference gradients of ``space`` at ``points``.

    ``points`` has shape ``(npts, 2)`` for cell spaces and ``(npts,)`` or
    ``(npts, 1)`` for facet spaces.
    """
    if space.is_facet:
        return _tabulate_facet(space, points)
    if not space.supports(shape):
        raise InvalidArgumentError(f"{space} is not defined on the reference {shape}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    coeffs = _coefficients(space)
    ncomp = len(coeffs[0])
    vals = np.empty((len(pts), len(coeffs), ncomp))
    grads = np.empty((len(pts), len(coeffs), ncomp, 2))
    for j, comps in enumerate(coeffs):
        for c, cc in enumerate(comps):
            v, gx, gy = _eval2d(cc, x, y)
            vals[:, j, c] = v
            grads[:, j, c, 0] = gx
            grads[:, j, c, 1] = gy
    div = None
    if space.is_vector:
        div = grads[:, :, 0, 0] + grads[:, :, 1, 1]
    return BasisTable(vals, grads, div)


def facet_points(shape, facet, s):
    """Map facet parameters ``s`` in [0, 1] to reference cell coordinates."""
    a, b, _ = REFERENCE_FACETS[shape][facet]
    a, b = np.asarray(a), np.asarray(b)
    s = np.asarray(s, dtype=float).reshape(-1, 1)
    return a + s * (b - a)


def facet_tangent(shape, facet):
    a, b, _ = REFERENCE_FACETS[shape][facet]
    return np.asarray(b) - np.asarray(a)


def facet_normal(shape, facet):
    return np.asarray(REFERENCE_FACETS[shape][facet][2])


def num_facets(shape):
    return len(REFERENCE_FACETS[shape])
