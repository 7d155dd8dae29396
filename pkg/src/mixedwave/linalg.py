"""Minimal sparse kernel: CSR storage, mat-vec, Jacobi-preconditioned CG.

Everything at desk scale is float64 numpy. The only solver offered is
conjugate gradients with a diagonal preconditioner; the step matrices this
package produces are symmetric positive definite by construction, so CG is
the right tool. A dense LDL-style fallback (`dense_solve`) exists purely as
a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class NonConvergence(RuntimeError):
    """CG hit its iteration cap; the system is indefinite or ill-conditioned."""


class CsrMatrix:
    """Compressed sparse row matrix.

    Invariants enforced at construction: row offsets are monotone with
    ``indptr[-1] == nnz``, and column indices are strictly increasing
    inside each row (no duplicates). Instances are immutable by
    convention and safe to share between concurrent readers.
    """

    __slots__ = ("indptr", "indices", "data", "shape", "_row_of_entry")

    def __init__(self, indptr, indices, data, shape):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.shape = (int(shape[0]), int(shape[1]))
        self._validate()
        self._row_of_entry = np.repeat(
            np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr)
        )

    def _validate(self):
        n_rows, n_cols = self.shape
        if self.indptr.shape != (n_rows + 1,):
            raise ValueError("indptr length must be n_rows + 1")
        if self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise ValueError("indptr must start at 0 and end at nnz")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("row offsets must be monotone")
        if self.indices.size != self.data.size:
            raise ValueError("indices and data must have equal length")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= n_cols:
                raise ValueError("column index out of range")
            same_row = np.repeat(
                np.arange(n_rows, dtype=np.int64), np.diff(self.indptr)
            )
            adjacent = same_row[1:] == same_row[:-1]
            if np.any(self.indices[1:][adjacent] <= self.indices[:-1][adjacent]):
                raise ValueError("column indices must increase strictly within rows")

    @property
    def nnz(self):
        return self.indices.size

    def diagonal(self):
        """Main diagonal as a dense vector (zeros where structurally absent)."""
        d = np.zeros(min(self.shape))
        hit = self.indices == self._row_of_entry
        d[self._row_of_entry[hit]] = self.data[hit]
        return d

    def row_nnz(self):
        return np.diff(self.indptr)

    def todense(self):
        out = np.zeros(self.shape)
        out[self._row_of_entry, self.indices] = self.data
        return out


def csr_from_coo(rows, cols, vals, shape):
    """Coalesce COO triplets (duplicates summed) into a CsrMatrix."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.size:
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        new_group = np.ones(rows.size, dtype=bool)
        new_group[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        group = np.cumsum(new_group) - 1
        vals = np.bincount(group, weights=vals)
        rows, cols = rows[new_group], cols[new_group]
    counts = np.bincount(rows, minlength=shape[0]) if rows.size else np.zeros(shape[0], dtype=np.int64)
    indptr = np.concatenate(([0], np.cumsum(counts)))
    return CsrMatrix(indptr, cols, vals, shape)


def csr_transpose(M: CsrMatrix) -> CsrMatrix:
    return csr_from_coo(M.indices, M._row_of_entry, M.data, (M.shape[1], M.shape[0]))


def csr_add(A: CsrMatrix, B: CsrMatrix) -> CsrMatrix:
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    rows = np.concatenate([A._row_of_entry, B._row_of_entry])
    cols = np.concatenate([A.indices, B.indices])
    vals = np.concatenate([A.data, B.data])
    return csr_from_coo(rows, cols, vals, A.shape)


def max_asymmetry(M: CsrMatrix) -> float:
    """max |M - M^T| entrywise; requires a structurally symmetric pattern."""
    T = csr_transpose(M)
    if not (np.array_equal(M.indptr, T.indptr) and np.array_equal(M.indices, T.indices)):
        raise ValueError("sparsity pattern is not symmetric")
    if M.nnz == 0:
        return 0.0
    return float(np.abs(M.data - T.data).max())


def spmv(M: CsrMatrix, x) -> np.ndarray:
    """Sparse matrix-vector product M @ x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (M.shape[1],):
        raise ValueError(f"dimension mismatch: matrix {M.shape}, vector {x.shape}")
    return np.bincount(M._row_of_entry, weights=M.data * x[M.indices], minlength=M.shape[0])


@dataclass(frozen=True)
class SolverConfig:
    """CG controls. max_iterations <= 0 means the default cap of 10 * n."""

    rel_tolerance: float = 1e-12
    max_iterations: int = 0

    def __post_init__(self):
        if self.rel_tolerance <= 0:
            raise ValueError("rel_tolerance must be positive")

    def iteration_cap(self, n):
        return self.max_iterations if self.max_iterations > 0 else 10 * max(n, 1)


class CgResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def cg_solve(M: CsrMatrix, b, cfg: SolverConfig | None = None) -> CgResult:
    """Solve M x = b for symmetric positive definite M.

    Jacobi-preconditioned conjugate gradients from a zero start. Stops when
    ||M x - b|| <= rel_tolerance * ||b||, with the true residual recomputed
    at the recursive stopping point so the guarantee is not a victim of
    residual-recurrence drift. Raises NonConvergence when the iteration cap
    is reached or a nonpositive curvature direction shows up (which means M
    was not positive definite).
    """
    if cfg is None:
        cfg = SolverConfig()
    b = np.asarray(b, dtype=np.float64)
    n = M.shape[0]
    if M.shape[0] != M.shape[1] or b.shape != (n,):
        raise ValueError("cg_solve needs a square matrix and a matching vector")
    norm_b = np.linalg.norm(b)
    x = np.zeros(n)
    if norm_b == 0.0:
        return CgResult(x, 0, 0.0)
    tol = cfg.rel_tolerance * norm_b
    diag = M.diagonal()
    if np.any(diag <= 0):
        raise NonConvergence("nonpositive diagonal entry; matrix is not SPD")
    r = b.copy()
    z = r / diag
    p = z
    rz = float(r @ z)
    cap = cfg.iteration_cap(n)
    for k in range(1, cap + 1):
        Mp = spmv(M, p)
        pMp = float(p @ Mp)
        if pMp <= 0.0:
            raise NonConvergence(f"nonpositive curvature at iteration {k}; matrix is not SPD")
        alpha = rz / pMp
        x = x + alpha * p
        r = r - alpha * Mp
        if np.linalg.norm(r) <= tol:
            true_r = b - spmv(M, x)
            if np.linalg.norm(true_r) <= tol:
                return CgResult(x, k, float(np.linalg.norm(true_r)))
            r = true_r
            z = r / diag
            p = z
            rz = float(r @ z)
            continue
        z = r / diag
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise NonConvergence(
        f"CG did not reach {cfg.rel_tolerance:g} relative residual in {cap} iterations"
    )


def schur_matrix(A: CsrMatrix, D: CsrMatrix, Cdiag, coeff: float) -> CsrMatrix:
    """Assemble A + coeff * D^T diag(Cdiag)^{-1} D as a sparse matrix.

    Cdiag must be strictly positive. The result is the implicit step
    operator; it is SPD whenever A is and coeff >= 0.
    """
    Cdiag = np.asarray(Cdiag, dtype=np.float64)
    if Cdiag.shape != (D.shape[0],):
        raise ValueError("Cdiag length must match the row count of D")
    if np.any(Cdiag <= 0):
        raise ValueError("Cdiag entries must be strictly positive")
    if A.shape != (D.shape[1], D.shape[1]):
        raise ValueError("A must be square over the column space of D")
    if coeff == 0.0:
        return CsrMatrix(A.indptr, A.indices, A.data.copy(), A.shape)
    rows, cols, vals = [A._row_of_entry], [A.indices], [A.data]
    for q in range(D.shape[0]):
        lo, hi = D.indptr[q], D.indptr[q + 1]
        idx = D.indices[lo:hi]
        v = D.data[lo:hi]
        k = idx.size
        if k == 0:
            continue
        rows.append(np.repeat(idx, k))
        cols.append(np.tile(idx, k))
        vals.append((coeff / Cdiag[q]) * np.outer(v, v).ravel())
    return csr_from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), A.shape
    )


def dense_solve(M: CsrMatrix, b) -> np.ndarray:
    """Dense factorization fallback. Test oracle only; O(n^3)."""
    return np.linalg.solve(M.todense(), np.asarray(b, dtype=np.float64))
