"""Gauss quadrature on the reference interval, square and triangle.

Reference cells are ``[0, 1]``, ``[0, 1]^2`` (``"square"`` or ``"quad"``)
and the unit triangle
``{x, y >= 0, x + y <= 1}``.  Triangle rules are collapsed (Duffy)
tensor Gauss rules, which are exact for total degree ``order``.
"""
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import InvalidArgumentError

MAX_ORDER = 30


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n, dim)
    weights: np.ndarray  # (n,)
    order: int

    def __len__(self):
        return len(self.weights)


def _gauss_interval(npts):
    x, w = leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature(shape, order):
    """Return a rule integrating polynomials of degree <= ``order`` exactly.

    For ``"square"`` and ``"interval"`` the degree is per variable, for
    ``"triangle"`` it is the total degree.
    """
    order = int(order)
    if order < 1 or order > MAX_ORDER:
        raise InvalidArgumentError(f"quadrature order must be in [1, {MAX_ORDER}], got {order}")
    npts = order // 2 + 1
    x, w = _gauss_interval(npts)
    if shape == "interval":
        return QuadratureRule(x[:, None], w, order)
    if shape in ("square", "quad"):
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), order)
    if shape == "triangle":
        # collapsed coordinates; one extra point in the collapsed direction
        # absorbs the (1 - s) Jacobian factor
        xs, ws = _gauss_interval((order + 1) // 2 + 1)
        S, T = np.meshgrid(xs, x, indexing="ij")
        WS, WT = np.meshgrid(ws, w, indexing="ij")
        px = S
        py = T * (1.0 - S)
        W = WS * WT * (1.0 - S)
        return QuadratureRule(np.column_stack([px.ravel(), py.ravel()]), W.ravel(), order)
    raise InvalidArgumentError(f"unknown reference shape {shape!r}")
