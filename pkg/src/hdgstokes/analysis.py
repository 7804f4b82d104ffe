"""Error measures, discrete norms, rates and element diagnostics."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .assembly import (
    DEFAULT_ORDERS,
    SolutionFields,
    assemble_group,
    default_alpha,
    element_family,
    evaluate_group,
    facet_eval,
    vector_facet_basis,
)
from .errors import InvalidArgumentError
from .mesh import geometry_basis, inv2x2
from .mapping import (
    MappingMode,
    facet_measure_scaling,
    push_scalar_values,
    push_velocity_divergence,
    push_velocity_gradients,
    push_velocity_values,
)
from .quadrature import quadrature
from .refelem import VectorQ, facet_normal, facet_points, facet_tangent, num_facets, space_dimension, tabulate

EXACT_TOL = 1e-10
ERROR_COLUMNS = ("e_u", "e_p", "e_div", "e_jump")


@dataclass
class ErrorReport:
    h: float
    e_u: float = float("nan")
    e_p: float = float("nan")
    e_div: float = 0.0
    e_jump: float = 0.0
    e_jump_boundary: float = 0.0
    norm_v: float = float("nan")
    norm_vprime: float = float("nan")
    norm_p: float = float("nan")
    dofs: int = 0

    @property
    def divergence_exact(self):
        return self.e_div <= EXACT_TOL

    def as_dict(self):
        return dict(self.__dict__)


def _cell_integrals(fields, exact, extra=4):
    k = fields.family.k
    eu = ep = ediv = 0.0
    for (shape, g), ids in fields.mesh.cell_groups().items():
        q = quadrature(shape, DEFAULT_ORDERS.cell(k, g) + extra)
        ev = evaluate_group(fields, ids, q.points)
        w = q.weights * ev["detJ"]
        ediv += float((w * ev["div_u"] ** 2).sum())
        if exact is not None and exact.u is not None:
            eu += float((w * ((ev["u"] - exact.u(ev["x"])) ** 2).sum(-1)).sum())
        if exact is not None and exact.p is not None:
            ep += float((w * (ev["p"] - exact.p(ev["x"])) ** 2).sum())
    return np.sqrt(eu), np.sqrt(ep), np.sqrt(ediv)


def normal_traces(fields, extra=4):
    """``u_h . n`` on every (cell, local facet) at facet Gauss points.

    Returns ``{(cell, lf): (un, ds, x)}`` with arrays in local order.
    """
    out = {}
    k = fields.family.k
    for (shape, g), ids in fields.mesh.cell_groups().items():
        cu = fields.group(ids, "u")
        for lf in range(num_facets(shape)):
            fe = facet_eval(fields.mesh, ids, lf, fields.family, DEFAULT_ORDERS.facet(k, g) + extra)
            un = np.einsum("cqbi,cqi,cb->cq", fe.u, fe.normal, cu)
            for n, c in enumerate(ids):
                out[(int(c), lf)] = (un[n], fe.ds[n], fe.x[n])
    return out


def jump_errors(fields, bc=None, extra=4):
    """(interior normal-jump L2 norm, boundary normal-trace L2 norm).

    The boundary column measures ``u_h . n`` against the facet-pressure
    projection of ``g . n``, which is the value the scheme enforces; with
    ``bc=None`` that target is zero.
    """
    traces = normal_traces(fields, extra)
    interior = boundary = 0.0
    for fac in fields.mesh.facets:
        s0 = fac.sides[0]
        un0, ds, x = traces[(s0.cell, s0.local)]
        if fac.on_boundary:
            target = 0.0
            if bc is not None:
                fe = _boundary_eval(fields, s0, extra)
                phi = fe.phi_p[0]
                # u_h . n times the arc-length factor is a facet polynomial, so
                # project in the reference measure
                shape = fields.mesh.cells[s0.cell].shape
                nhat = facet_normal(shape, s0.local)
                js = facet_measure_scaling(fe.geo, nhat)[0] * np.linalg.norm(facet_tangent(shape, s0.local))
                w = ds / js
                gn = np.einsum("qi,qi->q", bc(x), fe.normal[0]) * js
                M = np.einsum("q,qa,qb->ab", w, phi, phi)
                target = phi @ np.linalg.solve(M, np.einsum("q,qa,q->a", w, phi, gn)) / js
            boundary += float((ds * (un0 - target) ** 2).sum())
            continue
        s1 = fac.sides[1]
        un1 = traces[(s1.cell, s1.local)][0]
        # Gauss points are symmetric, so reversal flips the point order
        if s1.reversed != s0.reversed:
            un1 = un1[::-1]
        interior += float((ds * (un0 + un1) ** 2).sum())
    return np.sqrt(interior), np.sqrt(boundary)


def _boundary_eval(fields, side, extra):
    g = fields.mesh.cells[side.cell].geo_degree
    return facet_eval(
        fields.mesh,
        np.array([side.cell]),
        side.local,
        fields.family,
        DEFAULT_ORDERS.facet(fields.family.k, g) + extra,
        with_velocity=False,
    )


def project_fields(mesh, family, u=None, p=None, ubar=None, pbar=None, extra=4):
    """L2 projections of callables onto the discrete spaces as ``SolutionFields``.

    Missing callables give zero coefficients.  Facet projections use the
    canonical parametrisation, so ``ubar=u`` reproduces single-valued traces.
    """
    k = family.k
    nfv = family.facet_velocity_dim
    cu = [None] * mesh.num_cells
    cp = [None] * mesh.num_cells
    for (shape, g), ids in mesh.cell_groups().items():
        vel, pre = family.spaces_for(shape)
        q = quadrature(shape, DEFAULT_ORDERS.cell(k, g) + extra)
        geo = mesh.geometry(ids, q.points)
        V = push_velocity_values(tabulate(vel, q.points, shape), geo, family.velocity_mapping)
        P = tabulate(pre, q.points, shape).scalar
        w = q.weights * geo.detJ
        Mu = np.einsum("cq,cqai,cqbi->cab", w, V, V)
        Mp = np.einsum("cq,qa,qb->cab", w, P, P)
        bu = np.zeros(Mu.shape[:2]) if u is None else np.einsum("cq,cqai,cqi->ca", w, V, u(geo.x))
        bp = np.zeros(Mp.shape[:2]) if p is None else np.einsum("cq,qa,cq->ca", w, P, p(geo.x))
        su = np.linalg.solve(Mu, bu[..., None])[..., 0]
        sp_ = np.linalg.solve(Mp, bp[..., None])[..., 0]
        for n, c in enumerate(ids):
            cu[c], cp[c] = su[n], sp_[n]
    facet = np.zeros((len(mesh.facets), family.facet_block))
    for fid, fac in enumerate(mesh.facets):
        side = fac.sides[0]
        g = mesh.cells[side.cell].geo_degree
        fe = facet_eval(mesh, np.array([side.cell]), side.local, family, DEFAULT_ORDERS.facet(k, g) + extra, False)
        ds = fe.ds[0]
        if ubar is not None:
            ub = vector_facet_basis(fe.phi_v)[0]
            M = np.einsum("q,qAi,qBi->AB", ds, ub, ub)
            facet[fid, :nfv] = np.linalg.solve(M, np.einsum("q,qAi,qi->A", ds, ub, ubar(fe.x[0])))
        if pbar is not None:
            phi = fe.phi_p[0]
            M = np.einsum("q,qa,qb->ab", ds, phi, phi)
            facet[fid, nfv:] = np.linalg.solve(M, np.einsum("q,qa,q->a", ds, phi, pbar(fe.x[0])))
    return SolutionFields(mesh, family, cu, cp, facet)


def norm_squares(fields, alpha=None, extra=2):
    """Squared ``|||u|||_v``, extra ``v'`` term and ``|||p|||_p`` of the discrete solution."""
    mesh = fields.mesh
    fam = fields.family
    alpha = default_alpha(fam.k) if alpha is None else alpha
    nfv = fam.facet_velocity_dim
    grad = pen = dn2 = p2 = pbar2 = 0.0
    for (shape, g), ids in mesh.cell_groups().items():
        q = quadrature(shape, DEFAULT_ORDERS.cell(fam.k, g) + extra)
        ev = evaluate_group(fields, ids, q.points)
        w = q.weights * ev["detJ"]
        grad += float((w * (ev["grad_u"] ** 2).sum((-1, -2))).sum())
        p2 += float((w * ev["p"] ** 2).sum())
        hK = mesh.h_cells[ids]
        cu = fields.group(ids, "u")
        for lf in range(num_facets(shape)):
            fe = facet_eval(mesh, ids, lf, fam, DEFAULT_ORDERS.facet(fam.k, g) + extra)
            fids = [mesh.cell_facets[c][lf] for c in ids]
            ubar_c = fields.facet[fids, :nfv]
            pbar_c = fields.facet[fids, nfv:]
            u = np.einsum("cqbi,cb->cqi", fe.u, cu)
            ub = np.einsum("cqBi,cB->cqi", vector_facet_basis(fe.phi_v), ubar_c)
            dn = np.einsum("cqbij,cqj,cb->cqi", fe.grad_u, fe.normal, cu)
            pb = np.einsum("cqQ,cQ->cq", fe.phi_p, pbar_c)
            pen += float((alpha / hK * (fe.ds * ((ub - u) ** 2).sum(-1)).sum(-1)).sum())
            dn2 += float((hK / alpha * (fe.ds * (dn**2).sum(-1)).sum(-1)).sum())
            pbar2 += float((hK * (fe.ds * pb**2).sum(-1)).sum())
    return {"v": grad + pen, "vprime_extra": dn2, "p": p2 + pbar2}


def norm_v(fields, alpha=None):
    return float(np.sqrt(norm_squares(fields, alpha)["v"]))


def norm_vprime(fields, alpha=None):
    sq = norm_squares(fields, alpha)
    return float(np.sqrt(sq["v"] + sq["vprime_extra"]))


def norm_p(fields, alpha=None):
    return float(np.sqrt(norm_squares(fields, alpha)["p"]))


def compute_errors(fields, exact=None, alpha=None, dofs=0):
    """Error report; ``exact`` may be ``None`` or lack ``u``/``p``."""
    e_u, e_p, e_div = _cell_integrals(fields, exact)
    bc = exact.bc if exact is not None else None
    e_jump, e_jb = jump_errors(fields, bc)
    sq = norm_squares(fields, alpha)
    has_u = exact is not None and exact.u is not None
    has_p = exact is not None and exact.p is not None
    return ErrorReport(
        h=fields.mesh.h,
        e_u=e_u if has_u else float("nan"),
        e_p=e_p if has_p else float("nan"),
        e_div=e_div,
        e_jump=e_jump,
        e_jump_boundary=e_jb,
        norm_v=float(np.sqrt(sq["v"])),
        norm_vprime=float(np.sqrt(sq["v"] + sq["vprime_extra"])),
        norm_p=float(np.sqrt(sq["p"])),
        dofs=dofs,
    )


def velocity_l2_difference(a, b, extra=4):
    """L2 norm of ``u_a - u_b`` for two solutions on the same mesh and family."""
    total = 0.0
    k = a.family.k
    for (shape, g), ids in a.mesh.cell_groups().items():
        q = quadrature(shape, DEFAULT_ORDERS.cell(k, g) + extra)
        ea = evaluate_group(a, ids, q.points)
        eb = evaluate_group(b, ids, q.points)
        total += float((q.weights * ea["detJ"] * ((ea["u"] - eb["u"]) ** 2).sum(-1)).sum())
    return float(np.sqrt(total))


def velocity_l2_norm(a, extra=4):
    total = 0.0
    for (shape, g), ids in a.mesh.cell_groups().items():
        q = quadrature(shape, DEFAULT_ORDERS.cell(a.family.k, g) + extra)
        ev = evaluate_group(a, ids, q.points)
        total += float((q.weights * ev["detJ"] * (ev["u"] ** 2).sum(-1)).sum())
    return float(np.sqrt(total))


# --- convergence rates -----------------------------------------------------


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)  # ErrorReport, decreasing h

    def add(self, report):
        self.rows.append(report)
        self.rows.sort(key=lambda r: -r.h)

    @property
    def h(self):
        return np.array([r.h for r in self.rows])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def rates(self, name):
        return pairwise_rates(self.h, self.column(name))

    def least_squares_rate(self, name, last=3):
        return least_squares_rate(self.h[-last:], self.column(name)[-last:])


def pairwise_rates(h, e):
    """``log(e_i / e_{i+1}) / log(h_i / h_{i+1})``; NaN where an error is zero."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    r[(e[:-1] <= 0) | (e[1:] <= 0)] = np.nan
    return r


def least_squares_rate(h, e):
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    ok = (e > 0) & np.isfinite(e)
    if ok.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)
    return float(slope)


def convergence_rates(table, columns=ERROR_COLUMNS, last=3):
    """``{column: {"pairwise": [...], "least_squares": r, "excluded_zero": bool}}``."""
    if len(table.rows) < 2:
        raise InvalidArgumentError("need at least two refinement levels")
    out = {}
    for name in columns:
        e = table.column(name)
        out[name] = {
            "pairwise": table.rates(name),
            "least_squares": table.least_squares_rate(name, last),
            "excluded_zero": bool((e <= 0).any()),
        }
    return out


# --- element compatibility -------------------------------------------------


@dataclass
class CompatibilityReport:
    family: str
    k: int
    trace_residual: float
    div_residual: float

    @property
    def divergence_free(self):
        return self.trace_residual <= 1e-12 and self.div_residual <= 1e-12

    @property
    def verdict(self):
        return "divergence-free" if self.divergence_free else "not divergence-free"

    def as_dict(self):
        return {
            "family": self.family,
            "k": self.k,
            "trace_residual": self.trace_residual,
            "div_residual": self.div_residual,
            "verdict": self.verdict,
        }


def _ls_residual(w, A, b):
    """Weighted L2 residual of the least-squares fit of columns ``b`` by ``A``."""
    sw = np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(sw * A, sw * b, rcond=None)
    r = b - A @ coef
    return np.sqrt((w[:, None] * r**2).sum(0))


def check_element_compatibility(family, k=None):
    """Check the reference-space inclusions that make ``X_h`` divergence-free.

    ``trace_residual``: worst residual of fitting ``vhat . nhat`` on each
    reference facet by the facet pressure space.  ``div_residual``: worst
    residual of fitting ``div vhat`` by the cell pressure space.
    """
    if isinstance(family, str):
        family = element_family(family, k)
    if family.k > 4:
        raise InvalidArgumentError("compatibility check supports k <= 4")
    shape = family.shape
    vel, pre = family.spaces_for(shape)
    qc = quadrature(shape, 2 * family.k + 6)
    tv = tabulate(vel, qc.points, shape)
    tp = tabulate(pre, qc.points, shape)
    div_res = _ls_residual(qc.weights, tp.scalar, tv.ref_divergence).max()
    qf = quadrature("interval", 2 * family.k + 6)
    s = qf.points[:, 0]
    trace_res = 0.0
    phi = tabulate(family.facet_pressure, s).scalar
    for lf in range(num_facets(shape)):
        vals = tabulate(vel, facet_points(shape, lf, s), shape).values
        vn = vals @ facet_normal(shape, lf)
        trace_res = max(trace_res, _ls_residual(qf.weights, phi, vn).max())
    return CompatibilityReport(family.name, family.k, float(trace_res), float(div_res))


def counterexample(node_coords, mode=MappingMode.CONTRAVARIANT_PIOLA, order=10):
    """The ``[Q_1]^2`` field ``(x - 2 x y, 0)`` mapped onto a bilinear cell.

    Returns ``(pairing, div_norm)``: the largest ``|int_K q div v|`` over the
    mapped ``Q_0`` pressure space and ``||div v||_{L2(K)}``.
    """
    from .mesh import single_cell_mesh

    mesh = single_cell_mesh(node_coords)
    q = quadrature("quad", order)
    geo = mesh.geometry([0], q.points)
    xh, yh = q.points[:, 0], q.points[:, 1]
    # express the field in the VectorQ(1) basis to reuse the push-forward
    table = tabulate(VectorQ(1), q.points)
    target = np.stack([xh - 2 * xh * yh, np.zeros_like(xh)], -1)
    A = table.values.transpose(0, 2, 1).reshape(-1, table.nbasis)
    coef, *_ = np.linalg.lstsq(A, target.ravel(), rcond=None)
    div = push_velocity_divergence(table, geo, mode)[0] @ coef
    w = q.weights * geo.detJ[0]
    qvals = push_scalar_values(tabulate(element_family("rw", 1).cell_pressure, q.points), geo)[0]
    pairing = np.abs(np.einsum("q,qi,q->i", w, qvals, div)).max()
    return float(pairing), float(np.sqrt((w * div**2).sum()))


# --- discrete norm matrices and inf-sup ------------------------------------


@dataclass
class GlobalLayout:
    """Uncondensed dof numbering: cell u, interior-facet ubar | cell p, facet pbar."""

    vel_cell: list
    vel_facet: dict
    pre_cell: list
    pre_facet: dict
    n_vel: int
    n_pre: int


def _layout(mesh, family):
    off = 0
    vel_cell, pre_cell = [], []
    nus, nps = [], []
    for c, cell in enumerate(mesh.cells):
        vel, pre = family.spaces_for(cell.shape)
        nus.append(space_dimension(vel))
        nps.append(space_dimension(pre))
    for n in nus:
        vel_cell.append(off + np.arange(n))
        off += n
    vel_facet = {}
    nfv = family.facet_velocity_dim
    for fid, fac in enumerate(mesh.facets):
        if not fac.on_boundary:
            vel_facet[fid] = off + np.arange(nfv)
            off += nfv
    n_vel = off
    off = 0
    for n in nps:
        pre_cell.append(off + np.arange(n))
        off += n
    pre_facet = {}
    for fid in range(len(mesh.facets)):
        pre_facet[fid] = off + np.arange(family.facet_pressure_dim)
        off += family.facet_pressure_dim
    return GlobalLayout(vel_cell, vel_facet, pre_cell, pre_facet, n_vel, off)


def norm_matrices(mesh, family, alpha=None, max_dofs=3000):
    """Dense ``B``, ``N_v``, ``N_v'`` and ``N_p`` on ``V_h x Vbar_h`` and ``Q_h x Qbar_h``.

    Boundary facet velocities are excluded (``Vbar_h`` vanishes on the
    boundary).
    """
    alpha = default_alpha(family.k) if alpha is None else alpha
    lay = _layout(mesh, family)
    if lay.n_vel + lay.n_pre > max_dofs:
        raise InvalidArgumentError(
            f"dense inf-sup estimate limited to {max_dofs} dofs, mesh has {lay.n_vel + lay.n_pre}"
        )
    B = np.zeros((lay.n_pre, lay.n_vel))
    Nv = np.zeros((lay.n_vel, lay.n_vel))
    Nd = np.zeros((lay.n_vel, lay.n_vel))
    Np = np.zeros((lay.n_pre, lay.n_pre))
    k = family.k
    nfp = family.facet_pressure_dim
    for (shape, g), ids in mesh.cell_groups().items():
        blocks = assemble_group(mesh, ids, family, 1.0, alpha)
        vel, pre = family.spaces_for(shape)
        q = quadrature(shape, DEFAULT_ORDERS.cell(k, g))
        geo = mesh.geometry(ids, q.points)
        G = push_velocity_gradients(tabulate(vel, q.points, shape), geo, family.velocity_mapping)
        P = tabulate(pre, q.points, shape).scalar
        w = q.weights * geo.detJ
        grad = np.einsum("cq,cqaij,cqbij->cab", w, G, G)
        mass_p = np.einsum("cq,qa,qb->cab", w, P, P)
        for lf in range(num_facets(shape)):
            fe = facet_eval(mesh, ids, lf, family, DEFAULT_ORDERS.facet(k, g))
            ub = vector_facet_basis(fe.phi_v)
            dn = np.einsum("cqbij,cqj->cqbi", fe.grad_u, fe.normal)
            hK = mesh.h_cells[ids]
            for n, c in enumerate(ids):
                fid = mesh.cell_facets[c][lf]
                # penalty Gram over (u, ubar) of this facet
                uu = np.einsum("q,qai,qbi->ab", fe.ds[n], fe.u[n], fe.u[n])
                ubu = np.einsum("q,qAi,qbi->Ab", fe.ds[n], ub[n], fe.u[n])
                bb = np.einsum("q,qAi,qBi->AB", fe.ds[n], ub[n], ub[n])
                s = alpha / hK[n]
                iu = lay.vel_cell[c]
                Nv[np.ix_(iu, iu)] += s * uu
                Nd[np.ix_(iu, iu)] += (hK[n] / alpha) * np.einsum("q,qai,qbi->ab", fe.ds[n], dn[n], dn[n])
                if fid in lay.vel_facet:
                    ib = lay.vel_facet[fid]
                    Nv[np.ix_(ib, ib)] += s * bb
                    Nv[np.ix_(ib, iu)] -= s * ubu
                    Nv[np.ix_(iu, ib)] -= s * ubu.T
                ip = lay.pre_facet[fid]
                Np[np.ix_(ip, ip)] += hK[n] * np.einsum("q,qA,qB->AB", fe.ds[n], fe.phi_p[n], fe.phi_p[n])
                B[np.ix_(ip, iu)] += blocks.B_upbar[n][lf * nfp : (lf + 1) * nfp]
        for n, c in enumerate(ids):
            iu, ip = lay.vel_cell[c], lay.pre_cell[c]
            Nv[np.ix_(iu, iu)] += grad[n]
            Np[np.ix_(ip, ip)] += mass_p[n]
            B[np.ix_(ip, iu)] += blocks.B_up[n]
    return B, Nv, Nv + Nd, Np, lay


@dataclass
class InfSupReport:
    beta: float
    eigenvalues: np.ndarray  # smallest few generalized eigenvalues
    n_velocity: int
    n_pressure: int


def estimate_inf_sup(mesh, family, alpha=None, max_dofs=3000):
    """Discrete inf-sup constant of ``b_h`` in the ``|||.|||_v``/``|||.|||_p`` norms.

    The constant pressure mode ``(1, 1)`` lies in the kernel of ``B^T``;
    the estimate is the square root of the next generalised eigenvalue of
    ``B N_v^{-1} B^T`` relative to ``N_p``.
    """
    B, Nv, _, Np, lay = norm_matrices(mesh, family, alpha, max_dofs)
    try:
        cho = scipy.linalg.cho_factor(Nv)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError(f"velocity norm Gram matrix is not positive definite: {exc}") from exc
    S = B @ scipy.linalg.cho_solve(cho, B.T)
    S = 0.5 * (S + S.T)
    lam = scipy.linalg.eigh(S, Np, eigvals_only=True, subset_by_index=[0, min(5, len(S) - 1)])
    # drop the constant mode: the smallest eigenvalue, which is round-off sized
    beta = float(np.sqrt(max(lam[1], 0.0)))
    return InfSupReport(beta, lam, lay.n_vel, lay.n_pre)


def norm_equivalence_constant(mesh, family, alpha=None, max_dofs=3000):
    """``max |||v|||_{v'} / |||v|||_v`` over ``V_h x Vbar_h``."""
    _, Nv, Nvp, _, _ = norm_matrices(mesh, family, alpha, max_dofs)
    lam = scipy.linalg.eigh(Nvp, Nv, eigvals_only=True)
    return float(np.sqrt(lam[-1]))


# --- point evaluation (for self-convergence) ------------------------------


class PointLocator:
    """Locate physical points in a mesh by Newton inversion of the cell maps."""

    def __init__(self, mesh, candidates=6):
        self.mesh = mesh
        centres = np.array([mesh.node_coords(c).mean(0) for c in range(mesh.num_cells)])
        self.tree = cKDTree(centres)
        self.candidates = min(candidates, mesh.num_cells)
        self.nodes = {key: np.stack([mesh.node_coords(c) for c in ids]) for key, ids in mesh.cell_groups().items()}
        self.slot = np.empty(mesh.num_cells, dtype=int)
        for ids in mesh.cell_groups().values():
            self.slot[ids] = np.arange(len(ids))

    def _invert(self, key, cells, x, iters=30):
        shape, g = key
        X = self.nodes[key][self.slot[cells]]
        xh = np.full(x.shape, 0.5 if shape == "quad" else 1.0 / 3.0)
        for _ in range(iters):
            N, dN, _ = geometry_basis(shape, g, xh)
            r = np.einsum("pn,pni->pi", N, X) - x
            J = np.einsum("pnj,pni->pij", dN, X)
            _, Jinv = inv2x2(J)
            step = np.einsum("pij,pj->pi", Jinv, r)
            xh = xh - step
            if np.abs(step).max() < 1e-15:
                break
        return xh

    @staticmethod
    def _outside(shape, xh):
        if shape == "quad":
            return np.maximum(0.0, np.maximum(-xh.min(-1), xh.max(-1) - 1.0))
        return np.maximum(0.0, np.maximum(-xh.min(-1), xh.sum(-1) - 1.0))

    def locate(self, points):
        """Return ``(cells, ref_points)``; points outside the mesh map to the nearest cell."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        _, near = self.tree.query(points, k=self.candidates)
        near = near.reshape(len(points), -1)
        cells = np.full(len(points), -1)
        refs = np.zeros((len(points), 2))
        best = np.full(len(points), np.inf)
        keys = [(c.shape, c.geo_degree) for c in self.mesh.cells]
        for j in range(near.shape[1]):
            todo = np.nonzero(best > 1e-12)[0]
            if len(todo) == 0:
                break
            cand = near[todo, j]
            for key in set(keys[c] for c in cand):
                sel = np.array([keys[c] == key for c in cand])
                idx, cc = todo[sel], cand[sel]
                with np.errstate(all="ignore"):
                    xh = self._invert(key, cc, points[idx])
                    out = self._outside(key[0], xh)
                out = np.where(np.isfinite(out), out, np.inf)
                better = out < best[idx]
                best[idx[better]] = out[better]
                cells[idx[better]] = cc[better]
                refs[idx[better]] = xh[better]
        return cells, refs


def evaluate_velocity_at(fields, points, locator=None):
    """Velocity of ``fields`` at arbitrary physical points."""
    locator = locator or PointLocator(fields.mesh)
    mesh = fields.mesh
    cells, refs = locator.locate(points)
    out = np.empty((len(cells), 2))
    keys = np.array([f"{c.shape}:{c.geo_degree}" for c in mesh.cells])[cells]
    for key in np.unique(keys):
        sel = np.nonzero(keys == key)[0]
        shape, g = key.split(":")
        vel, _ = fields.family.spaces_for(shape)
        vhat = tabulate(vel, refs[sel], shape).values
        coef = np.stack([fields.u[c] for c in cells[sel]])
        v = np.einsum("pbi,pb->pi", vhat, coef)
        if fields.family.velocity_mapping is MappingMode.CONTRAVARIANT_PIOLA:
            _, dN, _ = geometry_basis(shape, int(g), refs[sel])
            J = np.einsum("pnj,pni->pij", dN, locator.nodes[(shape, int(g))][locator.slot[cells[sel]]])
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            v = np.einsum("pij,pj->pi", J, v) / det[:, None]
        out[sel] = v
    return out


def reference_difference(fields, reference, extra=2):
    """L2 norm over ``fields.mesh`` of ``u_h - u_ref`` with ``u_ref`` on another mesh."""
    locator = PointLocator(reference.mesh)
    total = 0.0
    for (shape, g), ids in fields.mesh.cell_groups().items():
        q = quadrature(shape, DEFAULT_ORDERS.cell(fields.family.k, g) + extra)
        ev = evaluate_group(fields, ids, q.points)
        pts = ev["x"].reshape(-1, 2)
        uref = evaluate_velocity_at(reference, pts, locator).reshape(ev["u"].shape)
        total += float((q.weights * ev["detJ"] * ((ev["u"] - uref) ** 2).sum(-1)).sum())
    return float(np.sqrt(total))


__all__ = [
    "CompatibilityReport",
    "ConvergenceTable",
    "ErrorReport",
    "InfSupReport",
    "PointLocator",
    "check_element_compatibility",
    "compute_errors",
    "convergence_rates",
    "counterexample",
    "estimate_inf_sup",
    "least_squares_rate",
    "norm_equivalence_constant",
    "norm_p",
    "norm_v",
    "norm_vprime",
    "pairwise_rates",
    "project_fields",
    "reference_difference",
    "velocity_l2_difference",
]
