"""Row-by-row least squares ``min |A X - b|^2`` solved by CG on the normal equations."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class SolveStats:
    iterations: int
    residual: float
    converged: bool


class LsqSystem:
    """Sparse least-squares system built one row (or one block of rows) at a time.

    Rows are stored as COO triplets; duplicate columns within a row are summed
    when the matrix is assembled.
    """

    def __init__(self, n_cols):
        self.n_cols = int(n_cols)
        self._rows = []
        self._cols = []
        self._vals = []
        self._rhs = []
        self.n_rows = 0

    def add_row(self, coeffs, rhs):
        """Append one equation ``sum(v * X[c] for c, v in coeffs) = rhs``."""
        cols = np.array([c for c, _ in coeffs], dtype=np.int64)
        vals = np.array([v for _, v in coeffs], dtype=float)
        self._check(cols)
        self._rows.append(np.full(len(cols), self.n_rows, dtype=np.int64))
        self._cols.append(cols)
        self._vals.append(vals)
        self._rhs.append(np.array([float(rhs)]))
        self.n_rows += 1

    def add_rows(self, cols, vals, rhs):
        """Append a block of equations with a fixed number of entries per row.

        ``cols`` and ``vals`` have shape (r, k), ``rhs`` shape (r,).
        """
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        if cols.ndim == 1:
            cols, vals = cols[:, None], vals[:, None]
        if cols.shape != vals.shape or cols.shape[0] != rhs.shape[0]:
            raise ValueError("cols, vals and rhs have inconsistent shapes")
        self._check(cols)
        r, k = cols.shape
        rows = np.repeat(np.arange(self.n_rows, self.n_rows + r), k)
        self._rows.append(rows)
        self._cols.append(cols.ravel())
        self._vals.append(vals.ravel())
        self._rhs.append(rhs)
        self.n_rows += r

    def _check(self, cols):
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise IndexError(f"column index out of range [0, {self.n_cols})")

    def matrix(self):
        if self.n_rows == 0:
            raise ValueError("no rows")
        A = sp.coo_matrix(
            (np.concatenate(self._vals), (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=(self.n_rows, self.n_cols),
        ).tocsr()
        A.sum_duplicates()
        return A, np.concatenate(self._rhs)

    def residual(self, X, rows=None):
        """Residual vector ``A X - b`` (optionally restricted to a row slice)."""
        A, b = self.matrix()
        if rows is not None:
            A, b = A[rows], b[rows]
        return A @ X - b

    def solve(self, tol=1e-10, max_iter=None, x0=None):
        A, b = self.matrix()
        AtA = (A.T @ A).tocsr()
        Atb = A.T @ b
        return pcg(AtA, Atb, tol=tol, max_iter=max_iter, x0=x0)


def pcg(M, rhs, tol=1e-10, max_iter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients for symmetric PSD ``M``.

    Columns with an empty diagonal are unconstrained and pinned to zero.
    Stops when ``|M x - rhs| <= tol * |rhs|``.
    """
    n = M.shape[0]
    if max_iter is None:
        max_iter = 5 * n
    diag = M.diagonal()
    live = diag > 0
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    x[~live] = 0.0
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0:
        return np.zeros(n), SolveStats(0, 0.0, True)
    inv_d = np.zeros(n)
    inv_d[live] = 1.0 / diag[live]
    r = rhs - M @ x
    r[~live] = 0.0
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > tol * bnorm and it < max_iter:
        Mp = M @ p
        alpha = rz / (p @ Mp)
        x += alpha * p
        r -= alpha * Mp
        it += 1
        # periodic true residual to stop recurrence drift
        if it % 200 == 0:
            r = rhs - M @ x
            r[~live] = 0.0
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.linalg.norm(r)
    true_res = np.linalg.norm(rhs - M @ x)
    return x, SolveStats(it, float(true_res), bool(rnorm <= tol * bnorm))
