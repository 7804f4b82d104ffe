import dataclasses

import numpy as np
import pytest
import scipy.linalg

from hdgstokes import linsolve
from hdgstokes.assembly import (
    PRESETS,
    ElementFamily,
    assemble_global,
    assemble_group,
    assemble_local,
    boundary_flux_data,
    condense,
    default_alpha,
    element_family,
    local_residuals,
    pressure_integrals,
    recover_fields,
    shift_pressure,
    solve,
)
from hdgstokes.analysis import compute_errors, velocity_l2_norm
from hdgstokes.cases import hydrostatic_case, manufactured_case
from hdgstokes.errors import CondensationError, InvalidArgumentError
from hdgstokes.mesh import (
    generate_bearing_mesh,
    generate_square_mesh,
    generate_trapezoidal_mesh,
    random_bilinear_cell,
    single_cell_mesh,
)
from hdgstokes.quadrature import quadrature
from hdgstokes.refelem import RT, ScalarQ, space_dimension, tabulate
from hdgstokes.mapping import push_velocity_values

UNIT = [[0, 0], [1, 0], [0, 1], [1, 1]]


def test_presets():
    fam = element_family("PM-RT", 2)
    assert (fam.cell_velocity, fam.cell_pressure, fam.velocity_mapping.value) == (RT(2), ScalarQ(2), "piola")
    assert element_family("rw", 1).velocity_mapping.value == "composition"
    assert set(PRESETS) == {"pm-rt", "pm-bdm", "pm-simplex", "rw"}


def test_unknown_preset_names_valid_ones():
    with pytest.raises(InvalidArgumentError, match="pm-rt"):
        element_family("taylor-hood", 2)
    with pytest.raises(InvalidArgumentError):
        element_family("pm-rt", 0)


def test_default_alpha():
    assert [default_alpha(k) for k in (1, 2, 3)] == [16, 64, 144]


def test_source_term_affine_cell():
    nodes = np.array([[0, 0], [2, 0.5], [0.3, 1], [2.3, 1.5]])
    m = single_cell_mesh(nodes)
    fam = element_family("pm-rt", 2)
    loc = assemble_local(m, 0, fam, 1.0, 64.0, lambda x: np.stack([np.ones(x.shape[:-1]), np.zeros(x.shape[:-1])], -1))
    q = quadrature("quad", 8)
    geo = m.geometry([0], q.points)
    V = push_velocity_values(tabulate(RT(2), q.points), geo, fam.velocity_mapping)[0]
    np.testing.assert_allclose(loc.F_u, (q.weights * geo.detJ[0]) @ V[:, :, 0], atol=1e-13)


def test_penalty_is_linear_in_alpha(rng):
    m = single_cell_mesh(random_bilinear_cell(rng))
    fam = element_family("pm-rt", 2)
    a0, a1, a2 = (assemble_local(m, 0, fam, 1.0, a) for a in (0.0, 5.0, 10.0))
    for name in ("A_uu", "A_uubar", "A_ubarubar"):
        p1 = getattr(a1, name) - getattr(a0, name)
        p2 = getattr(a2, name) - getattr(a0, name)
        np.testing.assert_allclose(p2, 2 * p1, atol=1e-12 * np.abs(p2).max())
    np.testing.assert_array_equal(a1.B_up, a2.B_up)


@pytest.mark.parametrize("name", PRESETS)
def test_local_matrix_symmetric(name, rng):
    if name == "pm-simplex":
        m = generate_square_mesh(1, "triangle", perturb=0.0)
    else:
        m = single_cell_mesh(random_bilinear_cell(rng))
    loc = assemble_local(m, 0, element_family(name, 2), 1.0, 64.0)
    K = loc.saddle_matrix()
    assert np.abs(K - K.T).max() <= 1e-12 * np.abs(K).max()
    A = loc.A_uu
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()


def test_schur_complement_symmetric(rng):
    m = single_cell_mesh(random_bilinear_cell(rng))
    loc = assemble_local(m, 0, element_family("pm-rt", 2), 1.0, 64.0)
    K = loc.saddle_matrix()
    nc = loc.n_cell
    S = K[nc:, nc:] - K[nc:, :nc] @ np.linalg.solve(K[:nc, :nc], K[:nc, nc:])
    assert np.abs(S - S.T).max() <= 1e-11 * np.abs(S).max()


def test_unit_square_pm_rt_k1_invertible():
    loc = assemble_local(single_cell_mesh(UNIT), 0, element_family("pm-rt", 1), 1.0, 16.0)
    Acc = loc.saddle_matrix()[: loc.n_cell, : loc.n_cell]
    assert np.isfinite(np.linalg.cond(Acc))
    condense(loc)


def test_condensation_matches_dense_solve(rng):
    m = single_cell_mesh(random_bilinear_cell(rng))
    f = lambda x: np.stack([np.sin(x[..., 0]), x[..., 1] ** 2], -1)  # noqa: E731
    loc = assemble_local(m, 0, element_family("pm-rt", 2), 1.0, 64.0, f)
    K, F = loc.saddle_matrix(), loc.rhs()
    nc = loc.n_cell
    facet = rng.standard_normal(K.shape[0] - nc)
    cond = condense(loc)
    cell = cond.y - cond.X @ facet
    direct = np.linalg.solve(K[:nc, :nc], F[:nc] - K[:nc, nc:] @ facet)
    np.testing.assert_allclose(cell, direct, atol=1e-12 * np.abs(direct).max())


def test_bdm_with_full_q_pressure_is_singular():
    fam = element_family("pm-bdm", 2)
    bad = dataclasses.replace(fam, cell_pressure=ScalarQ(1))
    loc = assemble_local(single_cell_mesh(UNIT), 0, bad, 1.0, 64.0)
    with pytest.raises(CondensationError) as info:
        condense(loc, cell=0)
    assert info.value.cell == 0
    condense(assemble_local(single_cell_mesh(UNIT), 0, fam, 1.0, 64.0))


def test_dof_count():
    m = generate_trapezoidal_mesh(4)
    fam = element_family("pm-rt", 2)
    sysm = assemble_global(m, fam)
    nb = len(m.boundary_facets())
    expected = len(m.facets) * (fam.facet_velocity_dim + fam.facet_pressure_dim) - nb * fam.facet_velocity_dim - 1
    assert sysm.matrix.shape == (expected, expected)
    assert fam.facet_velocity_dim == 2 * space_dimension(fam.facet_velocity)


def test_global_matrix_symmetric():
    sysm = assemble_global(generate_bearing_mesh(n_theta=8, n_r=2), element_family("pm-rt", 2))
    A = sysm.matrix
    assert abs(A - A.T).max() <= 1e-12 * abs(A).max()


def test_empty_mesh_and_bad_parameters():
    m = generate_trapezoidal_mesh(2)
    fam = element_family("pm-rt", 1)
    with pytest.raises(InvalidArgumentError):
        assemble_global(m, fam, nu=0.0)
    with pytest.raises(InvalidArgumentError):
        assemble_global(m, fam, alpha=-1.0)
    empty = dataclasses.replace(m)
    empty.cells = []
    with pytest.raises(InvalidArgumentError):
        assemble_global(empty, fam)


def test_zero_data_gives_zero_solution():
    fields, _ = solve(generate_trapezoidal_mesh(4), element_family("pm-rt", 1))
    assert np.abs(fields.coefficients()).max() == 0.0
    assert all(np.abs(p).max() == 0.0 for p in fields.p)


def test_hydrostatic_velocity_vanishes():
    case = hydrostatic_case(1e4)
    m = generate_trapezoidal_mesh(4)
    sysm = assemble_global(m, element_family("pm-rt", 2), f=case.f)
    fields, _ = solve(m, element_family("pm-rt", 2), f=case.f)
    assert np.abs(sysm.rhs).max() > 1.0
    assert velocity_l2_norm(fields) <= 1e-10
    rep = compute_errors(fields, case)
    assert rep.e_p <= 1e-3 * rep.norm_p


def _facet_pressure_residual(system, fields, bc):
    """Residual of the facet-pressure equations of b_h."""
    mesh, fam = fields.mesh, fields.family
    nfp = fam.facet_pressure_dim
    res = np.zeros((len(mesh.facets), nfp))
    for (_, _), ids in mesh.cell_groups().items():
        blocks = assemble_group(mesh, ids, fam, 1.0, system.alpha)
        for n, c in enumerate(ids):
            contrib = blocks.B_upbar[n] @ fields.u[c]
            for lf, fid in enumerate(mesh.cell_facets[c]):
                res[fid] += contrib[lf * nfp : (lf + 1) * nfp]
    for fid, flux in boundary_flux_data(mesh, fam, bc).items():
        res[fid] -= flux
    return np.abs(res).max()


@pytest.mark.parametrize(
    "mesh, name",
    [
        (generate_trapezoidal_mesh(4), "pm-rt"),
        (generate_bearing_mesh(n_theta=8, n_r=2), "pm-rt"),
        (generate_square_mesh(3, "mixed", perturb=0.15, seed=2), "pm-rt"),
        (generate_square_mesh(3, "triangle", 2, perturb=0.1, seed=4), "pm-simplex"),
        (generate_trapezoidal_mesh(4), "rw"),
    ],
)
def test_recovered_fields_satisfy_local_equations(mesh, name):
    case = manufactured_case(1.0)
    fam = element_family(name, 2)
    fields, system = solve(mesh, fam, f=case.f, bc=case.bc)
    assert local_residuals(system, fields, case.f).max() <= 1e-10
    assert _facet_pressure_residual(system, fields, case.bc) <= 1e-10
    total, area = pressure_integrals(fields)
    scale = max(1.0, max(np.abs(p).max() for p in fields.p))
    assert abs(total) <= 1e-10 * scale


def test_gauge_shift_invariance():
    case = manufactured_case(1.0)
    m = generate_trapezoidal_mesh(4)
    system = assemble_global(m, element_family("pm-rt", 1), f=case.f, bc=case.bc)
    x = linsolve.solve(linsolve.factor(system.matrix), system.rhs)
    a = recover_fields(system, x)
    b = recover_fields(system, x, gauge=False)
    shift_pressure(b, 3.7)
    shift_pressure(b, -pressure_integrals(b)[0] / pressure_integrals(b)[1])
    for pa, pb in zip(a.p, b.p):
        np.testing.assert_allclose(pa, pb, atol=1e-12)
    np.testing.assert_allclose(a.facet, b.facet, atol=1e-12)


def test_pm_divergence_free_on_mixed_mesh():
    case = manufactured_case(1.0)
    m = generate_square_mesh(4, "mixed", perturb=0.15, seed=7)
    for name in ("pm-rt", "pm-simplex", "pm-bdm"):
        fields, _ = solve(m, element_family(name, 2), f=case.f, bc=case.bc)
        rep = compute_errors(fields, case)
        assert rep.e_div <= 1e-10 and rep.e_jump <= 1e-10, name


def test_pm_simplex_converges():
    case = manufactured_case(1.0)
    errs = []
    for n in (4, 8):
        fields, _ = solve(generate_square_mesh(n, "triangle"), element_family("pm-simplex", 2), f=case.f, bc=case.bc)
        errs.append(compute_errors(fields, case).e_u)
    assert np.log2(errs[0] / errs[1]) > 2.7


def test_rw_family_has_no_companions():
    with pytest.raises(InvalidArgumentError):
        element_family("rw", 1).spaces_for("triangle")
    assert isinstance(element_family("pm-rt", 1), ElementFamily)


def test_a_h_coercive_on_trapezoids(rng):
    """Random-vector and eigenvalue check of a_h(v, v) >= 0 on each cell."""
    m = generate_trapezoidal_mesh(4)
    for k in (1, 2, 3):
        fam = element_family("pm-rt", k)
        blocks = assemble_group(m, np.arange(m.num_cells), fam, 1.0, default_alpha(k))
        for n in range(m.num_cells):
            A = np.block(
                [[blocks.A_uu[n], blocks.A_uubar[n]], [blocks.A_uubar[n].T, blocks.A_ubarubar[n]]]
            )
            v = rng.standard_normal((100, len(A)))
            assert (np.einsum("ri,ij,rj->r", v, A, v) >= 0).all()
            lam, vec = scipy.linalg.eigh(A)
            assert lam[0] >= -1e-10 * lam[-1]
            # near-kernel: constant u matched by the facet traces, which has zero norm as well
            kernel = vec[:, lam <= 1e-10 * lam[-1]]
            assert kernel.shape[1] == 2


@pytest.mark.parametrize("n", [16, 64])
def test_condensation_accepts_small_cells(n):
    """Pivot test must not depend on h: velocity and pressure pivots scale oppositely."""
    m = generate_trapezoidal_mesh(n)
    for name in ("pm-rt", "pm-bdm"):
        loc = assemble_local(m, 0, element_family(name, 3), 1e-6, default_alpha(3))
        cond = condense(loc, cell=0)
        assert np.isfinite(cond.S).all()
