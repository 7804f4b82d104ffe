"""Push-forward of reference fields to physical cells.

Arrays follow one convention: geometry carries leading batch dimensions
``(..., np)`` and basis tables are ``(np, nbasis, ...)``; results are
``(..., np, nbasis, ...)``.
"""
from enum import Enum

import numpy as np

from .errors import DegenerateGeometryError


class MappingMode(Enum):
    CONTRAVARIANT_PIOLA = "piola"
    COMPOSITION = "composition"


def _check(geo):
    if np.any(geo.detJ <= 0):
        raise DegenerateGeometryError(f"non-positive det J (min {np.min(geo.detJ):.3e})")


def push_velocity_values(table, geo, mode):
    """Physical values of each basis function at the tabulated points."""
    _check(geo)
    vhat = table.values
    if mode is MappingMode.COMPOSITION:
        return np.broadcast_to(vhat, geo.detJ.shape[:-1] + vhat.shape).copy()
    return np.einsum("...pij,pbj->...pbi", geo.J / geo.detJ[..., None, None], vhat)


def _ddet(geo):
    """d(det J)/d xhat_m, shape (..., 2)."""
    return geo.detJ[..., None] * np.einsum("...ba,...abm->...m", geo.Jinv, geo.H)


def push_velocity_gradients(table, geo, mode):
    """Physical gradients ``G[..., i, l] = d v_i / d x_l``.

    For the Piola map the product rule is applied to ``J / det J`` using
    the geometric Hessian, so the result is exact on curved cells.
    """
    _check(geo)
    vhat, ghat = table.values, table.ref_gradients
    if mode is MappingMode.COMPOSITION:
        return np.einsum("pbim,...pml->...pbil", ghat, geo.Jinv)
    det = geo.detJ[..., None, None]
    dd = _ddet(geo)
    # d(J_ij / det)/d xhat_m
    dP = geo.H / det[..., None] - np.einsum("...ij,...m->...ijm", geo.J, dd) / det[..., None] ** 2
    # batched matmuls; einsum is several times slower on these shapes
    t1 = np.matmul(np.moveaxis(dP, -1, -3)[..., None, :, :, :], vhat[:, :, None, :, None])[..., 0]
    dv = np.swapaxes(t1, -1, -2) + np.matmul((geo.J / det)[..., None, :, :], ghat)
    return np.matmul(dv, geo.Jinv[..., None, :, :])


def push_velocity_divergence(table, geo, mode):
    _check(geo)
    if mode is MappingMode.CONTRAVARIANT_PIOLA:
        return table.ref_divergence / geo.detJ[..., None]
    G = push_velocity_gradients(table, geo, mode)
    return G[..., 0, 0] + G[..., 1, 1]


def push_scalar_values(table, geo):
    """Composition ``q = qhat o T^{-1}`` realised on tabulated points."""
    vals = table.scalar
    return np.broadcast_to(vals, geo.detJ.shape[:-1] + vals.shape).copy()


def facet_measure_scaling(geo, nhat):
    """``|det J| * |J^{-T} nhat|``: ratio of physical to reference arc length."""
    m = np.einsum("...ji,j->...i", geo.Jinv, np.asarray(nhat, dtype=float))
    return np.abs(geo.detJ) * np.linalg.norm(m, axis=-1)


def physical_normal(geo, nhat):
    m = np.einsum("...ji,j->...i", geo.Jinv, np.asarray(nhat, dtype=float))
    return m / np.linalg.norm(m, axis=-1, keepdims=True)
