"""Convergence on distorted trapezoids.

Solves the manufactured problem with the Raviart-Thomas family on four
refinements and prints velocity and pressure errors with their observed
orders.  Expect velocity order k+1 and pressure order k, and a velocity
divergence at round-off level on every mesh.
"""
from hdgstokes import ConvergenceTable, compute_errors, element_family, generate_trapezoidal_mesh, manufactured_case, solve

case = manufactured_case(nu=1.0)

for k in (1, 2):
    family = element_family("pm-rt", k)
    table = ConvergenceTable()
    print(f"k = {k}")
    print(f"{'h':>8} {'e_u':>10} {'e_p':>10} {'e_div':>10}")
    for n in (4, 8, 16):
        fields, _ = solve(generate_trapezoidal_mesh(n), family, case.nu, f=case.f, bc=case.bc)
        r = compute_errors(fields, case)
        table.add(r)
        print(f"{r.h:8.4f} {r.e_u:10.3e} {r.e_p:10.3e} {r.e_div:10.1e}")
    print(f"orders: velocity {table.least_squares_rate('e_u'):.2f}, pressure {table.least_squares_rate('e_p'):.2f}\n")
