"""HDG discretisation of the Stokes problem with static condensation.

Unknowns per cell are the velocity ``u`` and pressure ``p``; per facet the
trace velocity ``ubar`` (two Cartesian components) and trace pressure
``pbar``.  The cell-local dof ordering is::

    [u | p | ubar_0, pbar_0 | ubar_1, pbar_1 | ...]

with one ``(ubar, pbar)`` block per local facet, expressed in the facet's
canonical parametrisation so that neighbouring cells share coefficients
without sign or permutation changes.
"""
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import linsolve
from .errors import CondensationError, InvalidArgumentError
from .mapping import (
    MappingMode,
    facet_measure_scaling,
    physical_normal,
    push_velocity_divergence,
    push_velocity_gradients,
    push_velocity_values,
)
from .quadrature import quadrature
from .refelem import (
    BDM,
    RT,
    FacetP,
    FacetQ,
    ScalarP,
    ScalarQ,
    VectorP,
    VectorQ,
    facet_normal,
    facet_points,
    facet_tangent,
    num_facets,
    space_dimension,
    tabulate,
)

PIOLA = MappingMode.CONTRAVARIANT_PIOLA
COMPOSITION = MappingMode.COMPOSITION


@dataclass(frozen=True)
class ElementFamily:
    name: str
    k: int
    shape: str
    cell_velocity: object
    facet_velocity: object
    cell_pressure: object
    facet_pressure: object
    velocity_mapping: MappingMode
    # cell spaces used on cells of another shape (mixed meshes)
    companions: dict = field(default_factory=dict, compare=False, hash=False)

    def spaces_for(self, shape):
        if shape == self.shape:
            return self.cell_velocity, self.cell_pressure
        if shape in self.companions:
            return self.companions[shape]
        raise InvalidArgumentError(f"family {self.name} has no spaces for {shape} cells")

    @property
    def facet_velocity_dim(self):
        return 2 * space_dimension(self.facet_velocity)

    @property
    def facet_pressure_dim(self):
        return space_dimension(self.facet_pressure)

    @property
    def facet_block(self):
        return self.facet_velocity_dim + self.facet_pressure_dim


PRESETS = ("pm-rt", "pm-bdm", "pm-simplex", "rw")


def element_family(name, k):
    """Named element presets.

    ``pm-*`` families map velocities with the contravariant Piola transform
    and are divergence-free; ``rw`` uses ``[Q_k]^2`` velocities mapped by
    composition.  PM presets carry the simplex pair as companion so they
    also run on mixed meshes.
    """
    key = name.lower()
    if k < 1:
        raise InvalidArgumentError("velocity degree k must be >= 1")
    simplex = {"triangle": (VectorP(k), ScalarP(k - 1))}
    if key == "pm-rt":
        return ElementFamily("pm-rt", k, "quad", RT(k), FacetQ(k), ScalarQ(k), FacetQ(k), PIOLA, simplex)
    if key == "pm-bdm":
        # Q_{k-1} leaves pressure modes orthogonal to div BDM_k for k >= 2
        return ElementFamily("pm-bdm", k, "quad", BDM(k), FacetQ(k), ScalarP(k - 1), FacetQ(k), PIOLA, simplex)
    if key == "pm-simplex":
        quad = {"quad": (RT(k), ScalarQ(k))}
        return ElementFamily("pm-simplex", k, "triangle", VectorP(k), FacetP(k), ScalarP(k - 1), FacetP(k), PIOLA, quad)
    if key == "rw":
        return ElementFamily("rw", k, "quad", VectorQ(k), FacetQ(k), ScalarQ(k - 1), FacetQ(k), COMPOSITION)
    raise InvalidArgumentError(f"unknown element family {name!r}; valid presets: {', '.join(PRESETS)}")


@dataclass(frozen=True)
class QuadratureOrders:
    """Quadrature orders as functions of ``k`` and the geometric degree."""

    cell_extra: int = 2
    facet_extra: int = 2
    source_extra: int = 8

    def cell(self, k, g):
        return 2 * k + 2 * g + self.cell_extra

    def facet(self, k, g):
        return 2 * k + g + self.facet_extra

    def source(self, k, g):
        return self.cell(k, g) + self.source_extra


DEFAULT_ORDERS = QuadratureOrders()


def default_alpha(k):
    return 16.0 * k * k


# --- local assembly --------------------------------------------------------


@dataclass
class LocalBlocks:
    """Cell-local matrices; arrays may carry a leading batch dimension."""

    A_uu: np.ndarray
    A_uubar: np.ndarray
    A_ubarubar: np.ndarray
    B_up: np.ndarray  # rows: cell pressure, cols: u
    B_upbar: np.ndarray  # rows: facet pressure, cols: u
    F_u: np.ndarray
    n_u: int
    n_p: int
    n_facets: int
    nfv: int  # facet velocity dofs per facet
    nfp: int  # facet pressure dofs per facet

    @property
    def n_cell(self):
        return self.n_u + self.n_p

    @property
    def n_facet(self):
        return self.n_facets * (self.nfv + self.nfp)

    def facet_indices(self):
        """Positions of (ubar, pbar) dofs within the facet part."""
        blk = self.nfv + self.nfp
        ub = np.concatenate([f * blk + np.arange(self.nfv) for f in range(self.n_facets)])
        pb = np.concatenate([f * blk + self.nfv + np.arange(self.nfp) for f in range(self.n_facets)])
        return ub, pb

    def saddle_matrix(self):
        """Full symmetric local matrix in ``[u | p | facets]`` ordering."""
        batch = self.A_uu.shape[:-2]
        n = self.n_cell + self.n_facet
        K = np.zeros(batch + (n, n))
        nu, npr = self.n_u, self.n_p
        ub, pb = self.facet_indices()
        ub = ub + self.n_cell
        pb = pb + self.n_cell
        K[..., :nu, :nu] = self.A_uu
        K[..., nu : nu + npr, :nu] = self.B_up
        K[..., :nu, nu : nu + npr] = np.swapaxes(self.B_up, -1, -2)
        K[..., :nu, ub] = self.A_uubar
        K[..., ub, :nu] = np.swapaxes(self.A_uubar, -1, -2)
        K[..., ub[:, None], ub[None, :]] = self.A_ubarubar
        K[..., pb, :nu] = self.B_upbar
        K[..., :nu, pb] = np.swapaxes(self.B_upbar, -1, -2)
        return K

    def rhs(self):
        batch = self.F_u.shape[:-1]
        F = np.zeros(batch + (self.n_cell + self.n_facet,))
        F[..., : self.n_u] = self.F_u
        return F


@dataclass
class FacetEval:
    """Velocity traces and facet bases on one local facet of a cell batch."""

    x: np.ndarray  # (nc, nq, 2)
    ds: np.ndarray  # (nc, nq) physical quadrature weights
    normal: np.ndarray  # (nc, nq, 2)
    u: np.ndarray  # (nc, nq, nu, 2)
    grad_u: np.ndarray  # (nc, nq, nu, 2, 2)
    phi_v: np.ndarray  # (nc, nq, nfb) scalar facet-velocity basis
    phi_p: np.ndarray  # (nc, nq, nfp)
    geo: object


def _canonical_basis(space, s, reversed_flags):
    """Facet basis at canonical parameters, per cell of the batch."""
    fwd = tabulate(space, s).scalar
    rev = tabulate(space, 1.0 - s).scalar
    return np.where(np.asarray(reversed_flags)[:, None, None], rev[None], fwd[None])


def reversed_flags(mesh, ids, lf):
    out = np.empty(len(ids), dtype=bool)
    for n, c in enumerate(ids):
        fac = mesh.facets[mesh.cell_facets[c][lf]]
        out[n] = next(s.reversed for s in fac.sides if s.cell == c and s.local == lf)
    return out


def facet_eval(mesh, ids, lf, family, order, with_velocity=True):
    shape = mesh.cells[ids[0]].shape
    vel, _ = family.spaces_for(shape)
    qf = quadrature("interval", order)
    s = qf.points[:, 0]
    xhat = facet_points(shape, lf, s)
    geo = mesh.geometry(ids, xhat)
    nhat = facet_normal(shape, lf)
    ref_len = np.linalg.norm(facet_tangent(shape, lf))
    ds = qf.weights * ref_len * facet_measure_scaling(geo, nhat)
    n = physical_normal(geo, nhat)
    flags = reversed_flags(mesh, ids, lf)
    u = g = None
    if with_velocity:
        tv = tabulate(vel, xhat, shape)
        u = push_velocity_values(tv, geo, family.velocity_mapping)
        g = push_velocity_gradients(tv, geo, family.velocity_mapping)
    return FacetEval(
        geo.x,
        ds,
        n,
        u,
        g,
        _canonical_basis(family.facet_velocity, s, flags),
        _canonical_basis(family.facet_pressure, s, flags),
        geo,
    )


def vector_facet_basis(phi):
    """``phi_a e_c`` for c = 0, 1 (component-major), shape (..., 2 nfb, 2)."""
    z = np.zeros_like(phi)
    return np.concatenate([np.stack([phi, z], -1), np.stack([z, phi], -1)], axis=-2)


def _zero_source(x):
    return np.zeros(x.shape)


def _gram(w, X, Y):
    """``sum_q w[c,q] X[c,q,a,...] Y[c,q,b,...]`` as ``(c, a, b)`` via matmul."""
    c, q, a = X.shape[:3]
    Xf = np.swapaxes((X * w.reshape(c, q, *([1] * (X.ndim - 2)))).reshape(c, q, a, -1), 1, 2).reshape(c, a, -1)
    Yf = np.swapaxes(Y.reshape(c, q, Y.shape[2], -1), 1, 2).reshape(c, Y.shape[2], -1)
    return Xf @ np.swapaxes(Yf, 1, 2)


def assemble_group(mesh, ids, family, nu, alpha, f=None, orders=DEFAULT_ORDERS):
    """Local blocks for a batch of cells sharing one (shape, geo_degree)."""
    ids = np.asarray(ids)
    cell = mesh.cells[ids[0]]
    shape, g = cell.shape, cell.geo_degree
    k = family.k
    vel, pre = family.spaces_for(shape)
    mode = family.velocity_mapping
    f = f or _zero_source
    nc = len(ids)

    qc = quadrature(shape, orders.cell(k, g))
    geo = mesh.geometry(ids, qc.points)
    tv = tabulate(vel, qc.points, shape)
    tp = tabulate(pre, qc.points, shape)
    G = push_velocity_gradients(tv, geo, mode)
    D = push_velocity_divergence(tv, geo, mode)
    wdet = qc.weights * geo.detJ
    A_uu = nu * _gram(wdet, G, G)
    B_up = -np.einsum("cq,qi,cqb->cib", wdet, tp.scalar, D)

    qs = quadrature(shape, orders.source(k, g))
    geo_s = mesh.geometry(ids, qs.points)
    Vs = push_velocity_values(tabulate(vel, qs.points, shape), geo_s, mode)
    F_u = np.einsum("cq,cqi,cqbi->cb", qs.weights * geo_s.detJ, f(geo_s.x), Vs)

    nfa = num_facets(shape)
    nfv = family.facet_velocity_dim
    nfp = family.facet_pressure_dim
    nu_ = A_uu.shape[-1]
    A_uubar = np.zeros((nc, nu_, nfa * nfv))
    A_bb = np.zeros((nc, nfa * nfv, nfa * nfv))
    B_upbar = np.zeros((nc, nfa * nfp, nu_))
    pen = alpha / mesh.h_cells[ids]
    for lf in range(nfa):
        fe = facet_eval(mesh, ids, lf, family, orders.facet(k, g))
        dn = np.einsum("cqbij,cqj->cqbi", fe.grad_u, fe.normal)
        ub = vector_facet_basis(fe.phi_v)
        A_uu += nu * (
            -_gram(fe.ds, fe.u, dn)
            - _gram(fe.ds, dn, fe.u)
            + pen[:, None, None] * _gram(fe.ds, fe.u, fe.u)
        )
        sl = slice(lf * nfv, (lf + 1) * nfv)
        A_uubar[:, :, sl] = nu * (
            _gram(fe.ds, dn, ub)
            - pen[:, None, None] * _gram(fe.ds, fe.u, ub)
        )
        A_bb[:, sl, sl] = nu * pen[:, None, None] * _gram(fe.ds, ub, ub)
        un = np.einsum("cqbi,cqi->cqb", fe.u, fe.normal)
        B_upbar[:, lf * nfp : (lf + 1) * nfp, :] = np.einsum("cq,cqQ,cqb->cQb", fe.ds, fe.phi_p, un)
    return LocalBlocks(A_uu, A_uubar, A_bb, B_up, B_upbar, F_u, nu_, tp.nbasis, nfa, nfv, nfp)


def _take(blocks, i):
    return replace(
        blocks,
        A_uu=blocks.A_uu[i],
        A_uubar=blocks.A_uubar[i],
        A_ubarubar=blocks.A_ubarubar[i],
        B_up=blocks.B_up[i],
        B_upbar=blocks.B_upbar[i],
        F_u=blocks.F_u[i],
    )


def assemble_local(mesh, cell_id, family, nu, alpha, f=None, orders=DEFAULT_ORDERS):
    """Local blocks of a single cell."""
    return _take(assemble_group(mesh, [cell_id], family, nu, alpha, f, orders), 0)


# --- static condensation ---------------------------------------------------


@dataclass
class Condensed:
    S: np.ndarray  # Schur complement over facet dofs
    g: np.ndarray  # condensed rhs
    X: np.ndarray  # A_cc^{-1} A_cf
    y: np.ndarray  # A_cc^{-1} F_c


def condense(local, cell=None):
    """Eliminate the cell unknowns ``(u, p)`` of one cell by dense LU."""
    K = local.saddle_matrix()
    F = local.rhs()
    nc = local.n_cell
    Acc, Acf = K[:nc, :nc], K[:nc, nc:]
    Afc, Aff = K[nc:, :nc], K[nc:, nc:]
    # Equilibrate so both the velocity block and the pressure Schur
    # complement are O(1); the pivot test is then independent of h and nu.
    nu_ = local.n_u
    d = np.ones(nc)
    diag = np.diag(Acc)[:nu_]
    d[:nu_] = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    rows = np.abs(Acc[nu_:, :nu_] * d[:nu_]).max(1) if nc > nu_ else np.ones(0)
    # a pressure row that no velocity sees stays unscaled and fails the pivot test
    d[nu_:] = 1.0 / np.where(rows > 1e-12 * rows.max(initial=0.0), rows, 1.0)
    lu, piv = scipy.linalg.lu_factor(d[:, None] * Acc * d, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= 1e-12 * np.abs(np.diag(lu)).max():
        where = int(np.argmin(pivots))
        raise CondensationError(
            f"cell {cell}: local saddle block is singular (pivot {pivots.min():.2e} at row {where})", cell=cell
        )
    X = d[:, None] * scipy.linalg.lu_solve((lu, piv), d[:, None] * Acf, check_finite=False)
    y = d * scipy.linalg.lu_solve((lu, piv), d * F[:nc], check_finite=False)
    S = Aff - Afc @ X
    return Condensed(0.5 * (S + S.T), F[nc:] - Afc @ y, X, y)


# --- global system ---------------------------------------------------------


@dataclass
class CondensedSystem:
    mesh: object
    family: ElementFamily
    matrix: sp.csr_matrix  # over free facet dofs
    rhs: np.ndarray
    free: np.ndarray  # global facet dof ids kept in the system
    fixed: np.ndarray  # global facet dof ids with prescribed values
    fixed_values: np.ndarray
    pinned: int  # facet-pressure dof pinned to zero
    cell_dofs: list  # per cell: global facet dof ids in local order
    recovery: list  # per cell: (X, y)
    n_u: list
    n_p: list
    nu: float
    alpha: float

    @property
    def n_global(self):
        return len(self.mesh.facets) * self.family.facet_block


def facet_dof(family, facet, j):
    return facet * family.facet_block + j


def project_boundary_data(mesh, family, bc, orders=DEFAULT_ORDERS):
    """L2 projection of ``bc`` onto the facet velocity space of boundary facets.

    Returns ``{facet id: coefficients (2 * nfb,)}`` in canonical orientation.
    """
    out = {}
    if bc is None:
        return out
    for fid in mesh.boundary_facets():
        fe = _boundary_eval(mesh, family, fid, orders)
        ub = vector_facet_basis(fe.phi_v)[0]
        ds = fe.ds[0]
        M = np.einsum("q,qAi,qBi->AB", ds, ub, ub)
        b = np.einsum("q,qAi,qi->A", ds, ub, bc(fe.x[0]))
        out[fid] = np.linalg.solve(M, b)
    return out


def _boundary_eval(mesh, family, fid, orders):
    side = mesh.facets[fid].sides[0]
    g = mesh.cells[side.cell].geo_degree
    return facet_eval(
        mesh, np.array([side.cell]), side.local, family, orders.facet(family.k, g) + 4, with_velocity=False
    )


def boundary_flux_data(mesh, family, bc, orders=DEFAULT_ORDERS):
    """``int_F (g . n) qbar ds`` for each boundary facet: rhs of the facet-pressure rows."""
    out = {}
    if bc is None:
        return out
    for fid in mesh.boundary_facets():
        fe = _boundary_eval(mesh, family, fid, orders)
        gn = np.einsum("qi,qi->q", bc(fe.x[0]), fe.normal[0])
        out[fid] = np.einsum("q,qQ,q->Q", fe.ds[0], fe.phi_p[0], gn)
    return out


def assemble_global(mesh, family, nu=1.0, alpha=None, f=None, bc=None, orders=DEFAULT_ORDERS):
    """Condensed facet system with Dirichlet velocity data and a pinned pressure dof.

    ``bc(x)`` gives the boundary velocity at points ``x`` of shape
    ``(nq, 2)``; ``None`` means homogeneous data.
    """
    if mesh.num_cells == 0:
        raise InvalidArgumentError("empty mesh")
    if nu <= 0:
        raise InvalidArgumentError("viscosity must be positive")
    alpha = default_alpha(family.k) if alpha is None else alpha
    if alpha <= 0:
        raise InvalidArgumentError("penalty parameter must be positive")
    blk = family.facet_block
    nfv = family.facet_velocity_dim
    nglob = len(mesh.facets) * blk

    cell_dofs = [None] * mesh.num_cells
    recovery = [None] * mesh.num_cells
    n_u = [0] * mesh.num_cells
    n_p = [0] * mesh.num_cells
    rows, cols, vals = [], [], []
    rhs = np.zeros(nglob)
    for (_, _), ids in mesh.cell_groups().items():
        blocks = assemble_group(mesh, ids, family, nu, alpha, f, orders)
        for n, c in enumerate(ids):
            loc = _take(blocks, n)
            cond = condense(loc, cell=int(c))
            dofs = np.concatenate([mesh.cell_facets[c][lf] * blk + np.arange(blk) for lf in range(loc.n_facets)])
            cell_dofs[c] = dofs
            recovery[c] = (cond.X, cond.y)
            n_u[c], n_p[c] = loc.n_u, loc.n_p
            rows.append(np.repeat(dofs, len(dofs)))
            cols.append(np.tile(dofs, len(dofs)))
            vals.append(cond.S.ravel())
            np.add.at(rhs, dofs, cond.g)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nglob, nglob)
    ).tocsr()

    # the discrete continuity equation carries the boundary normal flux
    for fid, flux in boundary_flux_data(mesh, family, bc, orders).items():
        rhs[facet_dof(family, fid, nfv) + np.arange(len(flux))] += flux

    fixed_vals = {}
    boundary = project_boundary_data(mesh, family, bc, orders)
    for fid in mesh.boundary_facets():
        coeffs = boundary.get(fid, np.zeros(nfv))
        for j in range(nfv):
            fixed_vals[facet_dof(family, fid, j)] = coeffs[j]
    # constant mode of the first facet's pressure fixes the pressure level
    pinned = facet_dof(family, 0, nfv)
    fixed_vals[pinned] = 0.0
    fixed = np.array(sorted(fixed_vals), dtype=int)
    fixed_values = np.array([fixed_vals[i] for i in fixed])
    mask = np.ones(nglob, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    A_ff = A[free][:, free]
    b = rhs[free] - A[free][:, fixed] @ fixed_values
    return CondensedSystem(
        mesh, family, A_ff.tocsr(), b, free, fixed, fixed_values, pinned, cell_dofs, recovery, n_u, n_p, nu, alpha
    )


# --- recovery --------------------------------------------------------------


@dataclass
class SolutionFields:
    mesh: object
    family: ElementFamily
    u: list  # per-cell velocity coefficients
    p: list  # per-cell pressure coefficients
    facet: np.ndarray  # (nfacets, facet_block): [ubar | pbar] coefficients

    @property
    def ubar(self):
        return self.facet[:, : self.family.facet_velocity_dim]

    @property
    def pbar(self):
        return self.facet[:, self.family.facet_velocity_dim :]

    def coefficients(self):
        """All velocity coefficients (cell then facet) as one vector."""
        return np.concatenate([np.concatenate(self.u), self.ubar.ravel()])

    def group(self, ids, which="u"):
        src = self.u if which == "u" else self.p
        return np.stack([src[i] for i in ids])

    def evaluate(self, cell_id, ref_points):
        """Velocity values, gradients, divergence and pressure at reference points."""
        return evaluate_group(self, np.array([cell_id]), ref_points, index=0)


def evaluate_group(fields, ids, ref_points, index=None):
    mesh = fields.mesh
    cell = mesh.cells[ids[0]]
    vel, pre = fields.family.spaces_for(cell.shape)
    mode = fields.family.velocity_mapping
    geo = mesh.geometry(ids, ref_points)
    tv = tabulate(vel, ref_points, cell.shape)
    tp = tabulate(pre, ref_points, cell.shape)
    cu = fields.group(ids, "u")
    cp = fields.group(ids, "p")
    out = {
        "x": geo.x,
        "u": np.einsum("cqbi,cb->cqi", push_velocity_values(tv, geo, mode), cu),
        "grad_u": np.einsum("cqbij,cb->cqij", push_velocity_gradients(tv, geo, mode), cu),
        "div_u": np.einsum("cqb,cb->cq", push_velocity_divergence(tv, geo, mode), cu),
        "p": np.einsum("qb,cb->cq", tp.scalar, cp),
        "detJ": geo.detJ,
    }
    if index is not None:
        out = {k: v[index] for k, v in out.items()}
    return out


def expand_facet_solution(system, x_free):
    full = np.zeros(system.n_global)
    full[system.free] = x_free
    full[system.fixed] = system.fixed_values
    return full


def recover_fields(system, facet_solution, gauge=True, orders=DEFAULT_ORDERS):
    """Back-substitute cell unknowns and fix the pressure mean to zero.

    ``facet_solution`` is either the free-dof vector returned by the
    linear solver or a full facet vector of length ``system.n_global``.
    """
    mesh = system.mesh
    full = facet_solution
    if len(facet_solution) != system.n_global:
        full = expand_facet_solution(system, facet_solution)
    u, p = [], []
    for c in range(mesh.num_cells):
        X, y = system.recovery[c]
        cvec = y - X @ full[system.cell_dofs[c]]
        u.append(cvec[: system.n_u[c]])
        p.append(cvec[system.n_u[c] :])
    facet = full.reshape(len(mesh.facets), system.family.facet_block).copy()
    fields = SolutionFields(mesh, system.family, u, p, facet)
    if gauge:
        shift_pressure(fields, -pressure_mean(fields, orders))
    return fields


def pressure_integrals(fields, orders=DEFAULT_ORDERS):
    """(integral of p_h, area of the mesh)."""
    total, area = 0.0, 0.0
    for (shape, g), ids in fields.mesh.cell_groups().items():
        q = quadrature(shape, orders.cell(fields.family.k, g))
        ev = evaluate_group(fields, ids, q.points)
        w = q.weights * ev["detJ"]
        total += float((w * ev["p"]).sum())
        area += float(w.sum())
    return total, area


def pressure_mean(fields, orders=DEFAULT_ORDERS):
    total, area = pressure_integrals(fields, orders)
    return total / area


def shift_pressure(fields, gamma):
    """Add ``gamma`` to both ``p_h`` and ``pbar_h`` (first basis functions are 1)."""
    for c in range(len(fields.p)):
        fields.p[c] = fields.p[c].copy()
        fields.p[c][0] += gamma
    fields.facet[:, fields.family.facet_velocity_dim] += gamma
    return fields


def local_residuals(system, fields, f=None, orders=DEFAULT_ORDERS):
    """Relative residual of the uncondensed local equations, per cell."""
    mesh = fields.mesh
    out = np.empty(mesh.num_cells)
    for (_, _), ids in mesh.cell_groups().items():
        blocks = assemble_group(mesh, ids, fields.family, system.nu, system.alpha, f, orders)
        K = blocks.saddle_matrix()
        F = blocks.rhs()
        for n, c in enumerate(ids):
            z = np.concatenate([fields.u[c], fields.p[c], fields.facet[mesh.cell_facets[c]].ravel()])
            r = K[n] @ z - F[n]
            # only cell rows are local equations; facet rows couple neighbours
            nc = blocks.n_cell
            scale = max(np.abs(K[n][:nc]).max() * np.abs(z).max(), np.abs(F[n]).max(), 1e-300)
            out[c] = np.abs(r[:nc]).max() / scale
    return out


def solve(mesh, family, nu=1.0, alpha=None, f=None, bc=None, orders=DEFAULT_ORDERS):
    """Assemble, solve and recover in one call; returns ``(fields, system)``."""
    system = assemble_global(mesh, family, nu, alpha, f, bc, orders)
    handle = linsolve.factor(system.matrix)
    x = linsolve.solve(handle, system.rhs)
    return recover_fields(system, x, orders=orders), system
