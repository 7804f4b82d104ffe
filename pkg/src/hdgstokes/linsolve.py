"""Sparse direct solution of the condensed facet system.

Backed by SuperLU (``scipy.sparse.linalg.splu``) with a COLAMD
fill-reducing ordering, which is deterministic for a given matrix.
Every solve checks the relative residual and applies one step of
iterative refinement when needed.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, SingularMatrixError, SolverAccuracyError

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class Factorization:
    matrix: sp.csc_matrix
    lu: object

    @property
    def shape(self):
        return self.matrix.shape


def factor(matrix, symmetric=True):
    A = sp.csc_matrix(matrix, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"matrix must be square, got {A.shape}")
    if symmetric:
        pattern = abs(A).astype(bool).astype(np.int8)
        if (pattern != pattern.T).nnz:
            raise InvalidArgumentError("matrix is not structurally symmetric")
    nnz_rows = np.diff(A.tocsr().indptr)
    if (nnz_rows == 0).any():
        row = int(np.argmin(nnz_rows))
        raise SingularMatrixError(f"structurally singular: row {row} is empty", pivot=row)
    try:
        lu = spla.splu(A, permc_spec="COLAMD", options={"SymmetricMode": symmetric})
    except RuntimeError as exc:
        raise SingularMatrixError(f"factorization failed: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    scale = abs(A).max()
    if diag.min() <= 1e-14 * scale:
        pivot = int(np.argmin(diag))
        raise SingularMatrixError(f"numerically singular: pivot {diag.min():.2e} at position {pivot}", pivot=pivot)
    return Factorization(A, lu)


def relative_residual(A, x, b):
    return np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), np.finfo(float).tiny)


def solve(handle, rhs, tol=RESIDUAL_TOL):
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != handle.shape[0]:
        raise InvalidArgumentError(f"rhs has length {b.shape[0]}, expected {handle.shape[0]}")
    if not np.any(b):
        return np.zeros_like(b)
    x = handle.lu.solve(b)
    res = relative_residual(handle.matrix, x, b)
    if res > tol:
        x = x + handle.lu.solve(b - handle.matrix @ x)
        res = relative_residual(handle.matrix, x, b)
    if not np.isfinite(res) or res > tol:
        raise SolverAccuracyError(f"relative residual {res:.2e} exceeds {tol:.0e}", residual=res)
    return x
