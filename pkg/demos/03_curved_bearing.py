"""Flow in an eccentric journal bearing on quartic curved cells.

The inner cylinder rotates, the outer one is at rest.  A large gradient
force is then added; the velocity should not move.  Mass conservation
is reported through the divergence and the normal jumps across facets.
"""
from hdgstokes import bearing_case, compute_errors, element_family, generate_bearing_mesh, solve
from hdgstokes.analysis import velocity_l2_difference, velocity_l2_norm

mesh = generate_bearing_mesh(n_theta=32, n_r=4, geo_degree=4)
family = element_family("pm-rt", 2)
print(f"{mesh.num_cells} cells, h = {mesh.h:.3f}")

base = bearing_case(c=0.0)
fields, system = solve(mesh, family, f=base.f, bc=base.bc)
r = compute_errors(fields, base)
print(f"c = 0:   e_div {r.e_div:.2e}, e_jump {r.e_jump:.2e}, {len(system.free)} facet unknowns")

for c in (1e3, 1e6):
    case = bearing_case(c=c)
    pushed, _ = solve(mesh, family, f=case.f, bc=case.bc)
    rel = velocity_l2_difference(fields, pushed) / velocity_l2_norm(fields)
    print(f"c = {c:g}: relative velocity change {rel:.2e}")
