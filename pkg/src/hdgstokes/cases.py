"""Problem definitions for the numerical experiments."""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

pi = np.pi


@dataclass(frozen=True)
class ExactSolution:
    """Stokes data; ``u``/``p`` are ``None`` when no exact solution is known.

    Callables take points of shape ``(..., 2)``.
    """

    name: str
    nu: float
    f: object
    bc: object
    u: object = None
    p: object = None
    mesh_family: str = "trapezoid"
    params: dict = None

    @property
    def has_exact(self):
        return self.u is not None


def _stack(a, b):
    return np.stack(np.broadcast_arrays(a, b), axis=-1)


def manufactured_case(nu=1.0):
    if nu <= 0:
        raise InvalidArgumentError("viscosity must be positive")

    def u(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _stack(np.sin(pi * x1) * np.sin(pi * x2), np.cos(pi * x1) * np.cos(pi * x2))

    def p(x):
        # zero mean on the unit square, so no constant is needed
        return np.sin(pi * x[..., 0]) * np.cos(pi * x[..., 1])

    def f(x):
        x1, x2 = x[..., 0], x[..., 1]
        s1, c1, s2, c2 = np.sin(pi * x1), np.cos(pi * x1), np.sin(pi * x2), np.cos(pi * x2)
        return _stack(2 * pi**2 * nu * s1 * s2 + pi * c1 * c2, 2 * pi**2 * nu * c1 * c2 - pi * s1 * s2)

    return ExactSolution("manufactured", nu, f, u, u, p, "trapezoid", {"nu": nu})


def hydrostatic_case(c=1e4):
    if c <= 0:
        raise InvalidArgumentError("c must be positive")

    def f(x):
        x2 = x[..., 1]
        return _stack(np.zeros_like(x2), c * (3 * x2**2 - x2 + 1))

    def p(x):
        x2 = x[..., 1]
        return c * (x2**3 - x2**2 / 2 + x2 - 7.0 / 12.0)

    def zero(x):
        return np.zeros(np.shape(x)[:-1] + (2,))

    return ExactSolution("hydrostatic", 1.0, f, None, zero, p, "trapezoid", {"c": c})


def bearing_case(c=0.0, r_i=0.7, r_o=1.0, e=0.15, u_i=1.0, u_o=0.0):
    """Eccentric bearing driven by the inner cylinder, plus ``c grad sin(pi x2)``.

    Boundary velocity is tangential, counterclockwise positive on both
    circles; which circle a point belongs to is decided by distance.
    """
    if c < 0:
        raise InvalidArgumentError("c must be non-negative")

    def f(x):
        x2 = x[..., 1]
        return _stack(np.zeros_like(x2), c * pi * np.cos(pi * x2))

    def bc(x):
        x1, x2 = x[..., 0], x[..., 1]
        d_in = np.abs(np.hypot(x1, x2 + e) - r_i)
        d_out = np.abs(np.hypot(x1, x2) - r_o)
        inner = d_in < d_out
        cy = np.where(inner, -e, 0.0)
        speed = np.where(inner, u_i, u_o)
        t = _stack(-(x2 - cy), x1)
        t /= np.linalg.norm(t, axis=-1, keepdims=True)
        return speed[..., None] * t

    params = {"c": c, "r_i": r_i, "r_o": r_o, "e": e, "u_i": u_i, "u_o": u_o}
    return ExactSolution("bearing", 1.0, f, bc, None, None, "bearing", params)


CASES = {"manufactured": manufactured_case, "hydrostatic": hydrostatic_case, "bearing": bearing_case}


def make_case(name, **params):
    try:
        builder = CASES[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown case {name!r}; valid cases: {', '.join(CASES)}") from None
    return builder(**params)


def momentum_residual(case, x, eps=1e-4):
    """``f + nu lap(u) - grad(p)`` by central differences; small for consistent data."""
    x = np.atleast_2d(x)
    lap = np.zeros(x.shape)
    gp = np.zeros(x.shape)
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        lap += (case.u(x + e) - 2 * case.u(x) + case.u(x - e)) / eps**2
        gp[:, d] = (case.p(x + e) - case.p(x - e)) / (2 * eps)
    return case.f(x) + case.nu * lap - gp


def divergence_fd(case, x, eps=1e-5):
    x = np.atleast_2d(x)
    div = np.zeros(len(x))
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        div += (case.u(x + e)[:, d] - case.u(x - e)[:, d]) / (2 * eps)
    return div
