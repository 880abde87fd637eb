"""Direct solver contracts: residual checks, determinism, rank diagnostics."""

import numpy as np
import pytest
from scipy.sparse import csr_matrix, identity

from curllod.assembly import assemble_coupling
from curllod.linsolve import (RankDeficiencyError, SaddleSystem, SolverError,
                              solve_saddle, solve_spd)
from curllod.mesh import build_structured_mesh


def test_spd_identity_and_zero_rhs():
    b = np.arange(5.0)
    assert np.array_equal(solve_spd(identity(5, format="csc"), b), b)
    assert np.array_equal(solve_spd(identity(5, format="csc"), np.zeros(5)),
                          np.zeros(5))


def test_spd_residual_contract():
    mesh = build_structured_mesh(2, 8)
    A = assemble_coupling(mesh, "grad-grad").mat + \
        assemble_coupling(mesh, "mass-scalar").mat
    rng = np.random.default_rng(1)
    b = rng.standard_normal(A.shape[0])
    x = solve_spd(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_hand_worked_saddle():
    # min x'x  s.t.  x0 + x1 = 1  ->  x = (1/2, 1/2, 0), multiplier -1
    A = identity(3, format="csc") * 2.0
    C = csr_matrix(np.array([[1.0, 1.0, 0.0]]))
    x, lam = solve_saddle(SaddleSystem(A, C, np.zeros(3), np.array([1.0])))
    assert np.allclose(x, [0.5, 0.5, 0.0], atol=1e-14)
    assert np.allclose(lam, [-1.0], atol=1e-14)


def test_zero_mean_neumann():
    # the constrained stiffness system enforces the weighted mean exactly
    mesh = build_structured_mesh(2, 8)
    K = assemble_coupling(mesh, "grad-grad").mat
    mv = assemble_coupling(mesh, "mean")
    rng = np.random.default_rng(2)
    b = rng.standard_normal(K.shape[0])
    b -= b.sum() / len(b)                      # compatible right-hand side
    x, lam = solve_saddle(SaddleSystem(K, csr_matrix(mv[None, :]), b))
    assert abs(mv @ x) <= 1e-12
    resid = np.linalg.norm(K @ x + mv * lam[0] - b)
    assert resid <= 1e-9 * np.linalg.norm(b)


def test_deterministic():
    mesh = build_structured_mesh(2, 4)
    K = assemble_coupling(mesh, "grad-grad").mat
    mv = assemble_coupling(mesh, "mean")
    b = np.sin(np.arange(K.shape[0]))
    b -= b.sum() / len(b)
    sys = SaddleSystem(K, csr_matrix(mv[None, :]), b)
    x1, _ = solve_saddle(sys)
    x2, _ = solve_saddle(sys)
    assert np.array_equal(x1, x2)


def test_rank_deficiency_names_rows():
    mesh = build_structured_mesh(2, 4)
    K = assemble_coupling(mesh, "grad-grad").mat
    mv = assemble_coupling(mesh, "mean")
    C = csr_matrix(np.vstack([mv, 2.0 * mv]))   # second row repeats the first
    b = np.zeros(K.shape[0])
    b[0] = 1.0
    with pytest.raises(RankDeficiencyError) as err:
        solve_saddle(SaddleSystem(K, C, b))
    assert "0" in str(err.value) or "1" in str(err.value)


def test_multiple_right_hand_sides():
    mesh = build_structured_mesh(2, 4)
    K = assemble_coupling(mesh, "grad-grad").mat
    mv = assemble_coupling(mesh, "mean")
    rng = np.random.default_rng(3)
    B = rng.standard_normal((K.shape[0], 3))
    B -= B.sum(axis=0) / K.shape[0]
    X, L = solve_saddle(SaddleSystem(K, csr_matrix(mv[None, :]), B))
    assert X.shape == (K.shape[0], 3) and L.shape == (1, 3)
    resid = K @ X + mv[:, None] @ L - B
    assert np.abs(resid).max() <= 1e-9


def test_empty_constraint_block_degrades_to_spd():
    A = identity(4, format="csc") * 3.0
    C = csr_matrix((0, 4))
    x, lam = solve_saddle(SaddleSystem(A, C, np.ones(4)))
    assert np.allclose(x, 1.0 / 3.0, atol=1e-14)
    assert lam.shape == (0,)


def test_singular_unconstrained_matrix_raises():
    A = csr_matrix(np.zeros((3, 3)))
    with pytest.raises(SolverError):
        solve_spd(A, np.ones(3))
