"""Sparse direct solves with verified residuals.

Constrained problems are posed as symmetric saddle systems with Lagrange
multipliers (never via kernel bases) and factored with SuperLU.  Every solve
checks its relative residual, applying a few steps of iterative refinement
first; a residual above the contract raises instead of returning silently.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import bmat, csc_matrix, issparse
from scipy.sparse.linalg import splu


class SolverError(RuntimeError):
    pass


class RankDeficiencyError(SolverError):
    pass


@dataclass
class SaddleSystem:
    """min 1/2 x'Ax - x'b  subject to  C x = d  (A symmetric, C full row rank)."""

    A: object
    C: object
    rhs_primal: np.ndarray
    rhs_multiplier: np.ndarray | None = None


def _norm(v):
    return float(np.sqrt(np.vdot(v, v).real))


def _factorize(mat, label):
    try:
        return splu(csc_matrix(mat))
    except RuntimeError as exc:
        raise SolverError(f"factorization breakdown ({label}): {exc}") from exc


def _factorize_symmetric(mat, label):
    """Ordering tuned for symmetric-structure (saddle) systems.

    Falls back to the default factorization when SuperLU rejects the
    relaxed pivoting; callers still verify residuals afterwards.
    """
    try:
        return splu(csc_matrix(mat), permc_spec="MMD_AT_PLUS_A",
                    options=dict(SymmetricMode=True, DiagPivotThresh=1e-3))
    except RuntimeError:
        return _factorize(mat, label)


def _refine(lu, mat, rhs, rtol, label, max_rounds=3):
    x = lu.solve(rhs)
    bnorm = max(_norm(rhs), np.finfo(float).tiny)
    for _ in range(max_rounds):
        r = rhs - mat @ x
        if _norm(r) <= rtol * bnorm:
            return x
        x = x + lu.solve(r)
    r = rhs - mat @ x
    if _norm(r) <= rtol * bnorm:
        return x
    raise SolverError(
        f"residual contract violated ({label}): "
        f"{_norm(r) / bnorm:.3e} > {rtol:.1e}")


def solve_spd(A, b, rtol=1e-10, label="spd"):
    """Direct solve of an SPD sparse system; relative residual <= rtol."""
    A = csc_matrix(A.mat if hasattr(A, "mat") else A)
    b = np.asarray(b, dtype=float)
    if not b.any():
        return np.zeros_like(b)
    return _refine(_factorize(A, label), A, b, rtol, label)


def _name_redundant_rows(C):
    """Pivoted-QR rank analysis of the constraint block (small systems only)."""
    from scipy.linalg import qr
    dense = C.toarray() if issparse(C) else np.asarray(C)
    _, r, piv = qr(dense.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if not len(diag):
        return []
    cut = diag[0] * 1e-12
    return sorted(piv[np.flatnonzero(diag <= cut)].tolist()) + \
        sorted(piv[len(diag):].tolist())


def solve_saddle(system, rtol=1e-9, label="saddle"):
    """Solve the KKT system; returns (primal, multiplier).

    Right-hand sides may carry multiple columns.  Rank-deficient constraint
    blocks are reported with the redundant row indices when the system is
    small enough to analyze densely.
    """
    A = csc_matrix(system.A.mat if hasattr(system.A, "mat") else system.A)
    C = csc_matrix(system.C.mat if hasattr(system.C, "mat") else system.C)
    nc, n = C.shape
    b1 = np.asarray(system.rhs_primal, dtype=float)
    single = b1.ndim == 1
    b1 = b1.reshape(n, -1)
    b2 = np.zeros((nc, b1.shape[1])) if system.rhs_multiplier is None else \
        np.asarray(system.rhs_multiplier, dtype=float).reshape(nc, -1)
    if nc == 0:
        x = _refine(_factorize(A, label), A, b1, rtol, label)
        lam = np.zeros((0, x.shape[1]))
        return (x[:, 0], lam[:, 0]) if single else (x, lam)
    kkt = csc_matrix(bmat([[A, C.T], [C, None]], format="csc"))
    rhs = np.vstack([b1, b2])
    try:
        try:
            sol = _refine(_factorize_symmetric(kkt, label), kkt, rhs, rtol,
                          label)
        except SolverError:
            # relaxed pivoting can lose accuracy on tough systems; retry
            # with the conservative factorization before giving up
            sol = _refine(_factorize(kkt, label), kkt, rhs, rtol, label)
    except SolverError:
        if nc <= 4000 and n <= 20000:
            redundant = _name_redundant_rows(C)
            if redundant:
                err = RankDeficiencyError(
                    f"constraint block is rank deficient ({label}); "
                    f"redundant rows {redundant}")
                err.rows = redundant
                raise err from None
        raise
    x, lam = sol[:n], sol[n:]
    return (x[:, 0], lam[:, 0]) if single else (x, lam)
