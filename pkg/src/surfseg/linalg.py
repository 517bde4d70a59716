"""Thin sparse-matrix layer used by the evolution and restoration solvers.

Assembly happens in triplet form; solves are delegated to scipy (a sparse
LU factorization by default, optionally diagonally preconditioned CG).
Solutions are verified against the requested residual before being
returned, so a (near-)singular system surfaces as a structured error
instead of garbage coordinates.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystemError

__all__ = ["TripletMatrix", "solve_spd"]


class TripletMatrix:
    """Square sparse matrix accumulated as (row, col, value) triplets.

    Duplicate entries are summed when the matrix is finalized, which is
    the natural fit for finite-element assembly.

    Parameters
    ----------
    n : int
        Matrix dimension.
    """

    def __init__(self, n: int):
        self.n = int(n)
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, i: int, j: int, value: float):
        self._rows.append(i)
        self._cols.append(j)
        self._vals.append(value)

    def add_many(self, rows, cols, values):
        """Append arrays of triplets at once."""
        self._rows.extend(np.asarray(rows, dtype=np.int64).ravel())
        self._cols.extend(np.asarray(cols, dtype=np.int64).ravel())
        self._vals.extend(np.asarray(values, dtype=np.float64).ravel())

    def add_block(self, rows, cols, block):
        """Add a dense block at the given row/col index sets."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        block = np.asarray(block, dtype=np.float64)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        self.add_many(rr, cc, block)

    def tocsr(self) -> sp.csr_matrix:
        """Finalize into CSR form, summing duplicates."""
        mat = sp.coo_matrix(
            (np.asarray(self._vals, dtype=np.float64),
             (np.asarray(self._rows, dtype=np.int64),
              np.asarray(self._cols, dtype=np.int64))),
            shape=(self.n, self.n),
        )
        return mat.tocsr()


def symmetry_defect(mat: sp.spmatrix) -> float:
    """Max absolute entry of A - A^T, as a sanity diagnostic."""
    d = mat - mat.T
    return 0.0 if d.nnz == 0 else float(np.max(np.abs(d.data)))


def solve_spd(mat, rhs, tol: float = 1e-10, method: str = "direct"):
    """Solve a symmetric positive (semi-)definite sparse system.

    Parameters
    ----------
    mat : scipy.sparse matrix or TripletMatrix
        System matrix. Symmetry is the caller's responsibility; the
        residual check below catches anything structurally wrong.
    rhs : array_like
        Right-hand side vector.
    tol : float
        Relative residual ||A x - b|| / ||b|| the solution must meet.
    method : {"direct", "cg"}
        "direct" factorizes with sparse LU. "cg" runs conjugate
        gradients with a diagonal (Jacobi) preconditioner and at most
        10 * n iterations.

    Returns
    -------
    x : ndarray
        Solution vector.

    Raises
    ------
    SingularSystemError
        If factorization fails or the residual check does not pass.
    """
    if isinstance(mat, TripletMatrix):
        mat = mat.tocsr()
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    if mat.shape != (n, n):
        raise ValueError(f"matrix shape {mat.shape} does not match rhs length {n}")

    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(n)

    if method == "direct":
        try:
            lu = spla.splu(mat.tocsc())
            x = lu.solve(rhs)
        except RuntimeError as exc:  # raised by SuperLU on singular factor
            raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    elif method == "cg":
        diag = mat.diagonal()
        if np.any(diag <= 0):
            raise SingularSystemError(
                "non-positive diagonal entry; system is not positive definite")
        precond = spla.LinearOperator((n, n), matvec=lambda v: v / diag)
        x, info = spla.cg(mat, rhs, rtol=tol, atol=0.0, maxiter=10 * n, M=precond)
        if info != 0:
            raise SingularSystemError(
                f"conjugate gradients did not converge (info={info})")
    else:
        raise ValueError(f"unknown solver method {method!r}")

    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solver produced non-finite values; "
                                  "system is singular or badly scaled")
    residual = float(np.linalg.norm(mat @ x - rhs)) / rhs_norm
    if residual > tol:
        raise SingularSystemError(
            f"solution residual {residual:.3e} exceeds tolerance {tol:.1e}; "
            "system is singular or severely ill-conditioned")
    return x
