"""Sparse matrices and the Krylov solvers used by every physics step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    pass


class BreakdownError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """CSR matrix plus symmetry / definiteness metadata.

    ``spd`` is a structural hint set by the assembler (for example a mass
    matrix with a negative coefficient is flagged ``spd=False``).
    """

    csr: sp.csr_matrix
    symmetric: bool = False
    spd: bool = False

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, symmetric=False, spd=False) -> "SparseMatrix":
        A = sp.coo_matrix((np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        if not np.all(np.isfinite(A.data)):
            raise ValueError("non-finite matrix entries")
        return cls(A, symmetric, spd)

    @classmethod
    def wrap(cls, A, symmetric=None, spd=False) -> "SparseMatrix":
        if isinstance(A, SparseMatrix):
            return A
        A = sp.csr_matrix(A)
        if symmetric is None:
            symmetric = A.shape[0] == A.shape[1] and abs(A - A.T).max() <= 1e-14 * max(abs(A).max(), 1)
        return cls(A, bool(symmetric), spd)

    @property
    def shape(self):
        return self.csr.shape

    def __matmul__(self, x):
        return self.csr @ x

    def __add__(self, other):
        o = other.csr if isinstance(other, SparseMatrix) else other
        sym = self.symmetric and isinstance(other, SparseMatrix) and other.symmetric
        return SparseMatrix((self.csr + o).tocsr(), sym, False)

    def __sub__(self, other):
        o = other.csr if isinstance(other, SparseMatrix) else other
        sym = self.symmetric and isinstance(other, SparseMatrix) and other.symmetric
        return SparseMatrix((self.csr - o).tocsr(), sym, False)

    def __mul__(self, alpha: float):
        return SparseMatrix((self.csr * alpha).tocsr(), self.symmetric, self.spd and alpha > 0)

    __rmul__ = __mul__

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    tolerance: float = DEFAULT_TOL
    method: str = ""


def _csr(A):
    if isinstance(A, SparseMatrix):
        return A.csr
    if sp.issparse(A):
        return A.tocsr()
    return np.asarray(A, dtype=float)


def jacobi_precondition(A) -> np.ndarray:
    """Inverse diagonal of A, to be applied as ``z = d * r``."""
    diag = np.asarray(_csr(A).diagonal(), dtype=float)
    zero = np.nonzero(diag == 0)[0]
    if len(zero):
        raise SolverError(f"zero diagonal entry in row {int(zero[0])}")
    return 1.0 / diag


def _precond(M, n):
    if M is None:
        return lambda r: r
    if callable(M):
        return M
    d = np.asarray(M, dtype=float)
    if d.shape != (n,):
        raise ValueError("diagonal preconditioner has the wrong length")
    return lambda r: d * r


def cg_solve(A, b, tol: float = DEFAULT_TOL, max_iter: int | None = None, x0=None, M=None):
    """Preconditioned conjugate gradients for SPD ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``. The reported residual is the
    recomputed true residual, not the recursive one.
    """
    A = _csr(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {n} entries")
    max_iter = max_iter or 10 * n + 100
    apply_M = _precond(M, n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0, 0.0, True, tol, "cg")
    target = tol * bnorm
    r = b - A @ x
    z = apply_M(r)
    p = z.copy()
    rz = r @ z
    it = 0
    while np.linalg.norm(r) > target and it < max_iter:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0 or not np.isfinite(pAp):
            raise BreakdownError(f"CG breakdown at iteration {it}: p^T A p = {pAp:g} "
                                 "(matrix not positive definite?)")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if it % 50 == 0:
            r = b - A @ x
        z = apply_M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(b - A @ x))
    return x, SolveReport(it, res, res <= target, tol, "cg")


def bicgstab_solve(A, b, tol: float = DEFAULT_TOL, max_iter: int | None = None, x0=None, M=None):
    """Right-preconditioned BiCGStab for general square ``A``."""
    A = _csr(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {n} entries")
    max_iter = max_iter or 10 * n + 100
    apply_M = _precond(M, n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0, 0.0, True, tol, "bicgstab")
    target = tol * bnorm
    r = b - A @ x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    it = 0
    tiny = np.finfo(float).tiny
    while np.linalg.norm(r) > target and it < max_iter:
        rho_new = r_hat @ r
        if abs(rho_new) < tiny:
            raise BreakdownError(f"BiCGStab breakdown at iteration {it}: rho = 0")
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        y = apply_M(p)
        v = A @ y
        denom = r_hat @ v
        if abs(denom) < tiny:
            raise BreakdownError(f"BiCGStab breakdown at iteration {it}: r_hat . A p = 0")
        alpha = rho_new / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= target:
            x += alpha * y
            r = s
            it += 1
            break
        zs = apply_M(s)
        t = A @ zs
        tt = t @ t
        if tt < tiny:
            raise BreakdownError(f"BiCGStab breakdown at iteration {it}: A s = 0")
        omega = (t @ s) / tt
        x += alpha * y + omega * zs
        r = s - omega * t
        rho = rho_new
        it += 1
        if omega == 0:
            raise BreakdownError(f"BiCGStab breakdown at iteration {it}: omega = 0")
    res = float(np.linalg.norm(b - A @ x))
    return x, SolveReport(it, res, res <= target, tol, "bicgstab")


def apply_dirichlet(A, b, dofs, values):
    """Symmetric elimination of fixed dofs.

    Returns a new (A, b) where the constrained rows/columns are identity and
    the known values are lifted into the right-hand side, so SPD input stays
    SPD.
    """
    S = SparseMatrix.wrap(A)
    A = S.csr.tocsr(copy=True)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    g = np.zeros(n)
    g[dofs] = values
    b -= A @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K).tocsr()
    A = A + sp.diags(1.0 - keep)
    b[dofs] = g[dofs]
    return SparseMatrix(A.tocsr(), S.symmetric, S.spd), b


def solve(A, b, tol: float = DEFAULT_TOL, max_iter: int | None = None, x0=None,
          symmetric: bool | None = None, what: str = "linear system"):
    """Jacobi-preconditioned CG or BiCGStab; raises SolverError on failure."""
    S = SparseMatrix.wrap(A)
    sym = S.symmetric if symmetric is None else symmetric
    M = jacobi_precondition(S)
    method = cg_solve if sym else bicgstab_solve
    x, rep = method(S, b, tol=tol, max_iter=max_iter, x0=x0, M=M)
    if not rep.converged:
        raise SolverError(f"{what}: {rep.method} did not converge in {rep.iterations} "
                          f"iterations (residual {rep.residual:.3e})")
    return x, rep
