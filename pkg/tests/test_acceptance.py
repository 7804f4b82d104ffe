"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``ACCEPTANCE <n> PASS|FAIL: ...`` line; the lines are
repeated in the pytest terminal summary.  Run the file directly to get
only the summary lines::

    python3 tests/test_acceptance.py
"""
import functools
import sys

import numpy as np
import pytest

from hdgstokes.analysis import (
    ConvergenceTable,
    check_element_compatibility,
    compute_errors,
    counterexample,
    estimate_inf_sup,
    reference_difference,
    velocity_l2_difference,
    velocity_l2_norm,
)
from hdgstokes.assembly import element_family, solve
from hdgstokes.cases import bearing_case, hydrostatic_case, manufactured_case
from hdgstokes.mapping import (
    MappingMode,
    facet_measure_scaling,
    physical_normal,
    push_velocity_divergence,
    push_velocity_values,
)
from hdgstokes.mesh import (
    generate_bearing_mesh,
    generate_trapezoidal_mesh,
    random_bilinear_cell,
    single_cell_mesh,
)
from hdgstokes.quadrature import quadrature
from hdgstokes.refelem import RT, ScalarQ, FacetQ, facet_normal, facet_points, facet_tangent, tabulate

RESULTS = {}

pytestmark = pytest.mark.acceptance


def record(n, ok, detail):
    line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def criterion(n):
    """Turn an unexpected exception into a recorded FAIL line."""

    def wrap(fn):
        @functools.wraps(fn)
        def run():
            try:
                fn()
            except AssertionError:
                raise
            except Exception as exc:
                record(n, False, f"raised {type(exc).__name__}: {exc}")

        return run

    return wrap


def _solve_case(mesh, name, k, case, nu=None):
    fields, system = solve(mesh, element_family(name, k), case.nu if nu is None else nu, None, case.f, case.bc)
    return fields, compute_errors(fields, case, dofs=len(system.free))


@pytest.mark.slow
@criterion(1)
def test_1_convergence_rates():
    case = manufactured_case(1.0)
    parts, ok = [], True
    for k in (1, 2, 3):
        table = ConvergenceTable()
        for n in (4, 8, 16, 32):
            table.add(_solve_case(generate_trapezoidal_mesh(n), "pm-rt", k, case)[1])
        ru, rp = table.least_squares_rate("e_u"), table.least_squares_rate("e_p")
        ok &= ru >= k + 1 - 0.15 and rp >= k - 0.15
        parts.append(f"k={k} u {ru:.2f} (>= {k + 0.85}) p {rp:.2f} (>= {k - 0.15})")
    record(1, ok, "; ".join(parts))


@criterion(2)
def test_2_exact_mass_conservation():
    case = manufactured_case(1.0)
    bearing = bearing_case()
    worst_div = worst_jump = 0.0
    for name in ("pm-rt", "pm-bdm"):
        for k in (1, 2, 3):
            for n in (4, 8, 16):
                r = _solve_case(generate_trapezoidal_mesh(n), name, k, case)[1]
                worst_div, worst_jump = max(worst_div, r.e_div), max(worst_jump, r.e_jump)
            r = _solve_case(generate_bearing_mesh(n_theta=16, n_r=2, geo_degree=4), name, k, bearing)[1]
            worst_div, worst_jump = max(worst_div, r.e_div), max(worst_jump, r.e_jump)
    ok = worst_div <= 1e-10 and worst_jump <= 1e-10
    record(2, ok, f"max e_div {worst_div:.2e}, max e_jump {worst_jump:.2e} (<= 1e-10)")


@criterion(3)
def test_3_rw_not_conservative():
    case = manufactured_case(1.0)
    reps = [_solve_case(generate_trapezoidal_mesh(n), "rw", 1, case)[1] for n in (4, 8, 16, 32)]
    div = [r.e_div for r in reps]
    jump = max(r.e_jump for r in reps)
    ok = div[0] >= 1e-3 and all(a > b for a, b in zip(div, div[1:])) and jump <= 1e-10
    record(3, ok, f"e_div {', '.join(f'{d:.3e}' for d in div)}; max e_jump {jump:.2e}")


@criterion(4)
def test_4_pressure_robustness():
    mesh = generate_trapezoidal_mesh(8)
    sols = {nu: _solve_case(mesh, "pm-rt", 2, manufactured_case(nu))[0] for nu in (1.0, 1e-3, 1e-6)}
    ref = velocity_l2_norm(sols[1.0])
    diff = max(velocity_l2_difference(sols[1.0], sols[nu]) / ref for nu in (1e-3, 1e-6))
    record(4, diff <= 1e-6, f"max relative difference {diff:.2e} (<= 1e-6)")


@criterion(5)
def test_5_hydrostatic():
    r = _solve_case(generate_trapezoidal_mesh(16), "pm-rt", 2, hydrostatic_case(1e4))[1]
    ok = r.e_u <= 1e-8 and r.e_div <= 1e-9 and r.e_jump <= 1e-10
    record(5, ok, f"e_u {r.e_u:.2e} (<= 1e-8), e_div {r.e_div:.2e} (<= 1e-9), e_jump {r.e_jump:.2e} (<= 1e-10)")


@criterion(6)
def test_6_gradient_force_on_curved_cells():
    mesh = generate_bearing_mesh(n_theta=32, n_r=4, geo_degree=4)
    a = _solve_case(mesh, "pm-rt", 2, bearing_case(c=0.0))[0]
    b = _solve_case(mesh, "pm-rt", 2, bearing_case(c=1e6))[0]
    diff = velocity_l2_difference(a, b) / velocity_l2_norm(a)
    record(6, diff <= 1e-6, f"relative difference {diff:.2e} (<= 1e-6)")


def _piola_errors(mesh, k):
    """Relative violation of divergence and normal-trace preservation on one cell."""
    space, pspace, fspace = RT(k), ScalarQ(k), FacetQ(k)
    q = quadrature("quad", 2 * k + 6)
    geo = mesh.geometry([0], q.points)
    t = tabulate(space, q.points)
    P = tabulate(pspace, q.points).scalar
    div = push_velocity_divergence(t, geo, MappingMode.CONTRAVARIANT_PIOLA)[0]
    phys = np.einsum("q,qa,qb->ab", q.weights * geo.detJ[0], P, div)
    ref = np.einsum("q,qa,qb->ab", q.weights, P, t.ref_divergence)
    e_div = np.abs(phys - ref).max() / np.abs(ref).max()
    qf = quadrature("interval", 2 * k + 6)
    e_tr = 0.0
    for lf in range(4):
        xh = facet_points("quad", lf, qf.points[:, 0])
        g = mesh.geometry([0], xh)
        tv = tabulate(space, xh)
        phi = tabulate(fspace, qf.points).scalar
        nhat = facet_normal("quad", lf)
        ds = qf.weights * np.linalg.norm(facet_tangent("quad", lf)) * facet_measure_scaling(g, nhat)[0]
        vn = np.einsum("qbi,qi->qb", push_velocity_values(tv, g, MappingMode.CONTRAVARIANT_PIOLA)[0], physical_normal(g, nhat)[0])
        phys = np.einsum("q,qa,qb->ab", ds, phi, vn)
        ref = np.einsum("q,qa,qb->ab", qf.weights * np.linalg.norm(facet_tangent("quad", lf)), phi, tv.values @ nhat)
        e_tr = max(e_tr, np.abs(phys - ref).max() / max(np.abs(ref).max(), 1.0))
    return e_div, e_tr


@criterion(7)
def test_7_piola_identities():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        mesh = single_cell_mesh(random_bilinear_cell(rng))
        for k in (1, 2, 3):
            worst = max(worst, *_piola_errors(mesh, k))
    record(7, worst <= 1e-12, f"max relative violation {worst:.2e} over 50 cells, k=1..3 (<= 1e-12)")


@criterion(8)
def test_8_element_certification():
    rt = [check_element_compatibility("pm-rt", k) for k in (1, 2, 3, 4)]
    bdm = [check_element_compatibility("pm-bdm", k) for k in (1, 2, 3)]
    rw = [check_element_compatibility("rw", k) for k in (1, 2, 3)]
    pairing, div = counterexample(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.3, 1.2]]))
    ok = (
        all(r.divergence_free for r in rt + bdm)
        and all(not r.divergence_free and r.div_residual > 1e-3 for r in rw)
        and pairing <= 1e-12
        and div > 1e-2
    )
    detail = (
        f"PM-RT/PM-BDM divergence-free: {all(r.divergence_free for r in rt + bdm)}; "
        f"RW min div residual {min(r.div_residual for r in rw):.3f}; "
        f"counterexample pairing {pairing:.1e}, ||div|| {div:.3f}"
    )
    record(8, ok, detail)


@criterion(9)
def test_9_inf_sup():
    fam = element_family("pm-rt", 1)
    betas = np.array([estimate_inf_sup(generate_trapezoidal_mesh(n), fam).beta for n in (2, 4, 8)])
    variation = betas.max() / betas.min() - 1
    ok = (betas > 0).all() and variation <= 0.25
    record(9, ok, f"beta {', '.join(f'{b:.4f}' for b in betas)}; variation {variation:.1%} (<= 25%)")


@pytest.mark.slow
@criterion(10)
def test_10_bearing_self_convergence():
    case = bearing_case()
    reference = _solve_case(generate_bearing_mesh(n_theta=128, n_r=16), "pm-rt", 3, case)[0]
    levels = [generate_bearing_mesh(n_theta=n, n_r=n // 8) for n in (16, 32, 64)]
    parts, ok = [], True
    for k in (1, 2):
        errs = [reference_difference(_solve_case(m, "pm-rt", k, case)[0], reference) for m in levels]
        h = np.array([m.h for m in levels])
        rates = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(h[:-1] / h[1:])
        ok &= bool((rates >= k + 0.5).all())
        parts.append(f"k={k} rates {', '.join(f'{r:.2f}' for r in rates)} (>= {k + 0.5})")
    record(10, ok, "; ".join(parts))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
