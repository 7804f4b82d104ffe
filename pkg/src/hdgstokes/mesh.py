"""Meshes of (possibly curved) quadrilateral and triangular cells.

Every cell carries a Lagrange geometric map ``T_K`` from its reference
cell.  Geometric nodes sit on an equispaced lattice of the reference cell
and are numbered lexicographically, first coordinate fastest:

* quad of degree g: node ``i + (g + 1) j`` sits at ``(i / g, j / g)``;
* triangle of degree g: nodes ``(i / g, j / g)`` with ``i + j <= g``,
  ordered by ``j`` then ``i``.

Facets are derived from the corner nodes and never stored on disk.  The
cell with the lower id owns the canonical parametrisation of a facet;
the other side records whether it traverses the facet in reverse.
"""
import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError
from .refelem import num_facets

MESH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Cell:
    shape: str
    geo_degree: int
    nodes: tuple

    def __post_init__(self):
        if self.shape not in ("quad", "triangle"):
            raise InvalidArgumentError(f"unknown cell shape {self.shape!r}")
        if self.geo_degree < 1:
            raise InvalidArgumentError("geo_degree must be >= 1")
        if len(self.nodes) != num_geometry_nodes(self.shape, self.geo_degree):
            raise InvalidArgumentError(
                f"{self.shape} of degree {self.geo_degree} needs "
                f"{num_geometry_nodes(self.shape, self.geo_degree)} nodes, got {len(self.nodes)}"
            )

    @property
    def corners(self):
        """Corner node ids in counterclockwise order."""
        g = self.geo_degree
        if self.shape == "quad":
            idx = (0, g, (g + 1) ** 2 - 1, g * (g + 1))
        else:
            idx = (0, g, (g + 1) * (g + 2) // 2 - 1)
        return tuple(self.nodes[i] for i in idx)

    def facet_nodes(self, local):
        """Node ids along local facet ``local`` in traversal order."""
        return tuple(self.nodes[i] for i in _facet_node_indices(self.shape, self.geo_degree, local))


@dataclass(frozen=True)
class FacetSide:
    cell: int
    local: int
    reversed: bool


@dataclass(frozen=True)
class Facet:
    sides: tuple
    vertices: tuple  # corner node ids in canonical direction

    @property
    def on_boundary(self):
        return len(self.sides) == 1


@dataclass(frozen=True)
class GeometryEval:
    x: np.ndarray  # (..., 2)
    J: np.ndarray  # (..., 2, 2), J[i, j] = d x_i / d xhat_j
    detJ: np.ndarray  # (...)
    Jinv: np.ndarray  # (..., 2, 2)
    H: np.ndarray  # (..., 2, 2, 2), H[i, j, m] = d^2 x_i / d xhat_j d xhat_m


def num_geometry_nodes(shape, degree):
    if shape == "quad":
        return (degree + 1) ** 2
    return (degree + 1) * (degree + 2) // 2


def _lattice(shape, g):
    if shape == "quad":
        return [(i, j) for j in range(g + 1) for i in range(g + 1)]
    return [(i, j) for j in range(g + 1) for i in range(g + 1 - j)]


@lru_cache(maxsize=None)
def geometry_nodes(shape, degree):
    return np.array(_lattice(shape, degree), dtype=float) / degree


@lru_cache(maxsize=None)
def _facet_node_indices(shape, g, local):
    lat = _lattice(shape, g)
    pos = {p: n for n, p in enumerate(lat)}
    if shape == "quad":
        paths = (
            [(i, 0) for i in range(g + 1)],
            [(g, j) for j in range(g + 1)],
            [(g - i, g) for i in range(g + 1)],
            [(0, g - j) for j in range(g + 1)],
        )
    else:
        paths = (
            [(i, 0) for i in range(g + 1)],
            [(g - j, j) for j in range(g + 1)],
            [(0, g - j) for j in range(g + 1)],
        )
    return tuple(pos[p] for p in paths[local])


@lru_cache(maxsize=None)
def _monomial_exponents(shape, g):
    return np.array(_lattice(shape, g), dtype=int)


@lru_cache(maxsize=None)
def _nodal_transform(shape, g):
    """Matrix mapping monomial values to Lagrange basis values."""
    e = _monomial_exponents(shape, g)
    nodes = 2.0 * geometry_nodes(shape, g) - 1.0
    V = np.prod(nodes[:, None, :] ** e[None, :, :], axis=2)
    return np.linalg.inv(V)


def _monomials(e, pts, dx, dy):
    """Derivative (dx, dy) of monomials in ``2 xhat - 1`` with exponents ``e``.

    Centred variables keep the Vandermonde matrix well conditioned.
    """
    out = np.full((len(pts), len(e)), 2.0 ** (dx + dy))
    pts = 2.0 * pts - 1.0
    for axis, d in ((0, dx), (1, dy)):
        p = e[:, axis]
        coef = np.ones(len(e))
        for m in range(d):
            coef = coef * (p - m)
        powr = np.maximum(p - d, 0)
        out *= coef[None, :] * pts[:, axis : axis + 1] ** powr[None, :]
    return out


def geometry_basis(shape, degree, points):
    """Lagrange geometric basis at reference ``points``.

    Returns ``(N, dN, d2N)`` with shapes ``(np, nn)``, ``(np, nn, 2)`` and
    ``(np, nn, 2, 2)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    e = _monomial_exponents(shape, degree)
    C = _nodal_transform(shape, degree)
    N = _monomials(e, pts, 0, 0) @ C
    dN = np.stack([_monomials(e, pts, 1, 0) @ C, _monomials(e, pts, 0, 1) @ C], axis=-1)
    dxx = _monomials(e, pts, 2, 0) @ C
    dxy = _monomials(e, pts, 1, 1) @ C
    dyy = _monomials(e, pts, 0, 2) @ C
    d2N = np.stack([np.stack([dxx, dxy], -1), np.stack([dxy, dyy], -1)], -2)
    return N, dN, d2N


def inv2x2(A):
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    inv = np.empty_like(A)
    inv[..., 0, 0] = A[..., 1, 1]
    inv[..., 1, 1] = A[..., 0, 0]
    inv[..., 0, 1] = -A[..., 0, 1]
    inv[..., 1, 0] = -A[..., 1, 0]
    return det, inv / det[..., None, None]


def evaluate_map(node_coords, shape, degree, points):
    """Evaluate ``T_K`` and its derivatives for a batch of cells.

    ``node_coords`` has shape ``(nc, nn, 2)``; results carry leading
    dimensions ``(nc, np)``.
    """
    N, dN, d2N = geometry_basis(shape, degree, points)
    X = np.asarray(node_coords, dtype=float)
    x = np.einsum("pn,cni->cpi", N, X)
    J = np.einsum("pnj,cni->cpij", dN, X)
    H = np.einsum("pnjm,cni->cpijm", d2N, X)
    detJ, Jinv = inv2x2(J)
    return GeometryEval(x, J, detJ, Jinv, H)


@dataclass
class Mesh:
    vertices: np.ndarray
    cells: list
    facets: list = field(default_factory=list)
    cell_facets: list = field(default_factory=list)
    dim: int = 2

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise InvalidArgumentError("vertices must be an (n, 2) array")
        self.cells = [c if isinstance(c, Cell) else Cell(c[0], c[1], tuple(c[2])) for c in self.cells]
        for c in self.cells:
            if max(c.nodes) >= len(self.vertices) or min(c.nodes) < 0:
                raise InvalidArgumentError("cell references a missing vertex")
        if not self.facets:
            self.facets, self.cell_facets = _build_facets(self.cells)
        self.h_cells = np.array([_diameter(self.vertices[list(c.nodes)]) for c in self.cells])

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def h(self):
        return float(self.h_cells.max())

    def node_coords(self, cell_id):
        return self.vertices[list(self.cells[cell_id].nodes)]

    def cell_groups(self):
        """Cell ids grouped by (shape, geo_degree), for batched evaluation."""
        groups = {}
        for i, c in enumerate(self.cells):
            groups.setdefault((c.shape, c.geo_degree), []).append(i)
        return {key: np.array(ids) for key, ids in groups.items()}

    def geometry(self, cell_ids, points):
        """Batched geometry for cells sharing one (shape, geo_degree)."""
        cell_ids = np.atleast_1d(cell_ids)
        first = self.cells[cell_ids[0]]
        X = np.stack([self.node_coords(i) for i in cell_ids])
        return evaluate_map(X, first.shape, first.geo_degree, points)

    def boundary_facets(self):
        return [f for f, fac in enumerate(self.facets) if fac.on_boundary]

    def to_dict(self):
        return {
            "version": MESH_FORMAT_VERSION,
            "vertices": self.vertices.tolist(),
            "cells": [
                {"shape": c.shape, "geo_degree": c.geo_degree, "nodes": list(c.nodes)} for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != MESH_FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported mesh format version {data.get('version')!r}")
        cells = [Cell(c["shape"], int(c["geo_degree"]), tuple(c["nodes"])) for c in data["cells"]]
        return cls(np.array(data["vertices"], dtype=float), cells)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _diameter(points):
    d = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def _build_facets(cells):
    found = {}
    order = []
    for cid, c in enumerate(cells):
        corners = c.corners
        nf = len(corners)
        for lf in range(nf):
            a, b = corners[lf], corners[(lf + 1) % nf]
            key = (min(a, b), max(a, b))
            if key not in found:
                found[key] = []
                order.append(key)
            found[key].append((cid, lf, a, b))
    facets = []
    cell_facets = [[None] * len(c.corners) for c in cells]
    for fid, key in enumerate(order):
        entries = sorted(found[key])
        if len(entries) > 2:
            raise InvalidArgumentError(f"facet {key} is shared by {len(entries)} cells")
        owner = entries[0]
        sides = []
        for cid, lf, a, b in entries:
            sides.append(FacetSide(cid, lf, a != owner[2]))
            cell_facets[cid][lf] = fid
        facets.append(Facet(tuple(sides), (owner[2], owner[3])))
    return facets, cell_facets


def cell_geometry_at(mesh, cell_id, ref_point):
    """Geometry of cell ``cell_id`` at a single reference point."""
    geo = mesh.geometry([cell_id], np.reshape(ref_point, (1, 2)))
    out = GeometryEval(geo.x[0, 0], geo.J[0, 0], geo.detJ[0, 0], geo.Jinv[0, 0], geo.H[0, 0])
    if out.detJ <= 0:
        raise DegenerateGeometryError(f"cell {cell_id}: det J = {out.detJ:.3e} at {ref_point}", cell=cell_id)
    return out


def check_geometry(mesh, points_by_shape):
    """Raise if ``det J <= 0`` anywhere on the supplied reference points."""
    for (shape, _), ids in mesh.cell_groups().items():
        geo = mesh.geometry(ids, points_by_shape[shape])
        bad = np.nonzero((geo.detJ <= 0).any(axis=1))[0]
        if len(bad):
            cid = int(ids[bad[0]])
            raise DegenerateGeometryError(f"cell {cid} has non-positive det J", cell=cid)


# --- shape regularity ------------------------------------------------------


def _incircle_diameter(a, b, c):
    la = np.linalg.norm(b - c)
    lb = np.linalg.norm(c - a)
    lc = np.linalg.norm(a - b)
    area = 0.5 * abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
    return 4.0 * area / (la + lb + lc)


def cell_shape_regularity(mesh):
    """Per-cell ``h_K / rho_K`` using corner vertices only.

    ``rho_K`` is the incircle diameter for triangles and, for quads, the
    smallest incircle diameter over the four corner triangles.  Curved
    cells are measured through their straight-sided sub-map and trigger a
    warning.
    """
    out = np.empty(mesh.num_cells)
    curved = False
    for cid, c in enumerate(mesh.cells):
        P = mesh.vertices[list(c.corners)]
        curved |= c.geo_degree > 1
        if c.shape == "triangle":
            rho = _incircle_diameter(*P)
        else:
            rho = min(_incircle_diameter(*(P[j] for j in range(4) if j != i)) for i in range(4))
        out[cid] = _diameter(P) / rho
    if curved:
        warnings.warn("curved cells: shape regularity approximated by the degree-1 sub-map", stacklevel=2)
    return out


def shape_regularity(mesh):
    return float(cell_shape_regularity(mesh).max())


# --- generators ------------------------------------------------------------


def generate_trapezoidal_mesh(n, offset=0.125):
    """``n x n`` mesh of the unit square made of similar trapezoids.

    Interior grid rows are shifted vertically by ``(-1)^(i+j) offset h``,
    so interior cells have vertical sides ``(1 -+ 2 offset) h``.  The
    default keeps ``a_h`` coercive with ``alpha = 16 k^2`` for k = 1; with
    ``offset=0.25`` the interior cells need ``alpha > 18``.
    """
    if n < 2 or n % 2:
        raise InvalidArgumentError(f"trapezoidal mesh needs an even n >= 2, got {n}")
    if not 0 <= offset < 0.5:
        raise InvalidArgumentError("offset must lie in [0, 0.5)")
    h = 1.0 / n
    verts = []
    for j in range(n + 1):
        for i in range(n + 1):
            delta = 0.0 if j in (0, n) else (-1) ** (i + j) * offset * h
            verts.append((i * h, j * h + delta))
    cells = []
    for j in range(n):
        for i in range(n):
            v = i + (n + 1) * j
            cells.append(Cell("quad", 1, (v, v + 1, v + n + 1, v + n + 2)))
    return Mesh(np.array(verts), cells)


def generate_square_mesh(n, shape="quad", geo_degree=1, perturb=0.0, seed=0):
    """Structured mesh of the unit square.

    ``shape`` is ``"quad"``, ``"triangle"`` (each square split along its
    diagonal) or ``"mixed"`` (checkerboard of quads and triangle pairs).
    ``perturb`` moves interior lattice vertices randomly by up to
    ``perturb * h`` in each direction; higher-degree nodes are placed on
    the straight-sided cells.
    """
    if n < 1:
        raise InvalidArgumentError("n must be positive")
    h = 1.0 / n
    rng = np.random.default_rng(seed)
    corner = np.array([(i * h, j * h) for j in range(n + 1) for i in range(n + 1)])
    if perturb:
        inner = np.array([0 < i < n and 0 < j < n for j in range(n + 1) for i in range(n + 1)])
        corner[inner] += rng.uniform(-perturb * h, perturb * h, size=(inner.sum(), 2))

    cells_corners = []
    for j in range(n):
        for i in range(n):
            a = i + (n + 1) * j
            b, c, d = a + 1, a + n + 2, a + n + 1
            use_quad = shape == "quad" or (shape == "mixed" and (i + j) % 2 == 0)
            if use_quad:
                cells_corners.append(("quad", (a, b, c, d)))
            elif shape in ("triangle", "mixed"):
                cells_corners.append(("triangle", (a, b, c)))
                cells_corners.append(("triangle", (a, c, d)))
            else:
                raise InvalidArgumentError(f"unknown shape {shape!r}")
    return _lift_to_degree(corner, cells_corners, geo_degree)


def _lift_to_degree(corner_xy, cells_corners, g, place=None):
    """Build a degree-``g`` mesh from straight-sided cells, sharing edge nodes.

    ``place(points)`` may move newly created nodes (e.g. onto a curve).
    """
    verts = [tuple(p) for p in corner_xy]
    cache = {}

    def node_for(key, xy):
        if key not in cache:
            cache[key] = len(verts)
            verts.append(tuple(xy))
        return cache[key]

    cells = []
    for shape, cn in cells_corners:
        P = corner_xy[list(cn)]
        lat = _lattice(shape, g)
        ids = []
        for i, j in lat:
            s, t = i / g, j / g
            if shape == "quad":
                xy = (1 - s) * (1 - t) * P[0] + s * (1 - t) * P[1] + s * t * P[2] + (1 - s) * t * P[3]
                bary = {cn[0]: (1 - s) * (1 - t), cn[1]: s * (1 - t), cn[2]: s * t, cn[3]: (1 - s) * t}
            else:
                xy = (1 - s - t) * P[0] + s * P[1] + t * P[2]
                bary = {cn[0]: 1 - s - t, cn[1]: s, cn[2]: t}
            support = {v: w for v, w in bary.items() if abs(w) > 1e-14}
            if len(support) == 1:
                ids.append(next(iter(support)))
                continue
            if len(support) == 2:
                # edge node: key by its position along the (sorted) edge
                (v0, w0), (v1, w1) = sorted(support.items())
                key = ("e", v0, v1, round(w1 * g))
            else:
                key = ("c", len(cells), i, j)
            ids.append(node_for(key, xy))
        cells.append(Cell(shape, g, tuple(ids)))
    return Mesh(np.array(verts), cells)


def generate_bearing_mesh(r_i=0.7, r_o=1.0, e=0.15, n_theta=16, n_r=2, geo_degree=4):
    """Structured quad mesh of the eccentric annulus between two circles.

    The outer circle has radius ``r_o`` about the origin, the inner one
    radius ``r_i`` about ``(0, -e)``.  Nodes are placed by linear
    transfinite interpolation ``(1 - s) C_i(theta) + s C_o(theta)`` on a
    uniform ``(s, theta)`` lattice, so boundary nodes lie on the circles.
    The first reference coordinate runs outward, the second
    counterclockwise.
    """
    if not (r_i > 0 and r_i + abs(e) < r_o):
        raise InvalidArgumentError("need 0 < r_i and r_i + |e| < r_o")
    if n_theta < 8 or n_r < 2:
        raise InvalidArgumentError("need n_theta >= 8 and n_r >= 2")
    if not 1 <= geo_degree <= 4:
        raise InvalidArgumentError("geo_degree must be in [1, 4]")
    g = geo_degree
    ns, nt = g * n_r + 1, g * n_theta
    s = np.arange(ns) / (g * n_r)
    theta = 2 * np.pi * np.arange(nt) / nt
    S, T = np.meshgrid(s, theta, indexing="ij")
    inner = np.stack([r_i * np.cos(T), -e + r_i * np.sin(T)], -1)
    outer = np.stack([r_o * np.cos(T), r_o * np.sin(T)], -1)
    X = (1 - S)[..., None] * inner + S[..., None] * outer
    verts = X.reshape(-1, 2)

    def gid(a, b):
        return a * nt + (b % nt)

    cells = []
    for j in range(n_theta):
        for i in range(n_r):
            ids = tuple(gid(g * i + p, g * j + q) for q in range(g + 1) for p in range(g + 1))
            cells.append(Cell("quad", g, ids))
    return Mesh(verts, cells)


def single_cell_mesh(node_coords, shape="quad", geo_degree=1):
    node_coords = np.asarray(node_coords, dtype=float)
    return Mesh(node_coords, [Cell(shape, geo_degree, tuple(range(len(node_coords))))])


def random_bilinear_cell(rng, jitter=0.2):
    """Corners of a random convex quad, lexicographic node order."""
    while True:
        P = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        P += rng.uniform(-jitter, jitter, size=P.shape)
        edges = np.roll(P, -1, axis=0) - P
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if (cross > 0.05).all():
            A = rng.uniform(0.5, 2.0) * _rotation(rng.uniform(0, 2 * np.pi))
            P = P @ A.T + rng.uniform(-1, 1, size=2)
            # counterclockwise corners -> lexicographic node order
            return P[[0, 1, 3, 2]]


def _rotation(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def is_convex(points):
    """Corners in counterclockwise order."""
    edges = np.roll(points, -1, axis=0) - points
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    return bool((cross > 0).all())


def mesh_corners(mesh, cell_id):
    return mesh.vertices[list(mesh.cells[cell_id].corners)]


__all__ = [
    "Cell",
    "Facet",
    "FacetSide",
    "GeometryEval",
    "Mesh",
    "cell_geometry_at",
    "cell_shape_regularity",
    "generate_bearing_mesh",
    "generate_square_mesh",
    "generate_trapezoidal_mesh",
    "geometry_basis",
    "geometry_nodes",
    "is_convex",
    "shape_regularity",
    "single_cell_mesh",
]
