"""Numerics kernel tests: linear solves, exponential actions, LCP solvers."""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from parisian.numerics import (
    LCPProblem,
    LCPStatus,
    TriDiag,
    complementarity_residual,
    expm_action,
    generator_expm,
    lemke_solve,
    policy_solve,
    projected_jacobi,
    psor_solve,
    solve_tridiag,
)


def brute_force_lcp(A, q, tol=1e-9):
    """Enumerate all 2^n complementary bases (independent oracle)."""
    n = len(q)
    for mask in range(1 << n):
        free = [i for i in range(n) if mask >> i & 1]
        z = np.zeros(n)
        if free:
            try:
                z[free] = np.linalg.solve(A[np.ix_(free, free)], -q[free])
            except np.linalg.LinAlgError:
                continue
        w = A @ z + q
        if np.all(z >= -tol) and np.all(w >= -tol):
            return np.maximum(z, 0.0)
    return None


def random_pd_lcp(rng, n):
    B = rng.normal(size=(n, n))
    A = B @ B.T + n * np.eye(n)
    q = 2.0 * rng.normal(size=n)
    return A, q


def random_generator(rng, n):
    G = rng.exponential(size=(n, n))
    np.fill_diagonal(G, 0.0)
    G[np.arange(n), np.arange(n)] = -G.sum(axis=1)
    return G


class TestTriDiag:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            TriDiag(np.zeros(3), np.zeros(3), np.zeros(2))

    def test_identity_solve_returns_rhs(self):
        n = 7
        T = TriDiag(np.zeros(n - 1), np.ones(n), np.zeros(n - 1))
        b = np.arange(n, dtype=float)
        assert np.allclose(solve_tridiag(T, b), b)

    def test_two_by_two_forced_solution(self):
        T = TriDiag(np.array([1.0]), np.array([2.0, 2.0]), np.array([1.0]))
        x = solve_tridiag(T, np.array([3.0, 3.0]))
        assert np.allclose(x, [1.0, 1.0], atol=1e-14)

    def test_matches_dense_lu_on_diagonally_dominant(self):
        rng = np.random.default_rng(7)
        n = 50
        sub, sup = rng.normal(size=n - 1), rng.normal(size=n - 1)
        main = 4.0 + np.abs(rng.normal(size=n))
        T = TriDiag(sub, main, sup)
        b = rng.normal(size=n)
        x = solve_tridiag(T, b)
        x_dense = np.linalg.solve(T.to_dense(), b)
        assert np.max(np.abs(x - x_dense)) <= 1e-10
        assert np.max(np.abs(T.to_dense() @ x - b)) <= 1e-10 * (1 + np.abs(b).max())

    def test_singular_system_raises(self):
        T = TriDiag(np.array([0.0]), np.array([1.0, 0.0]), np.array([0.0]))
        with pytest.raises(np.linalg.LinAlgError):
            solve_tridiag(T, np.array([1.0, 1.0]))

    def test_matvec_matches_dense(self):
        rng = np.random.default_rng(3)
        T = TriDiag(rng.normal(size=4), rng.normal(size=5), rng.normal(size=4))
        x = rng.normal(size=5)
        assert np.allclose(T.matvec(x), T.to_dense() @ x)


class TestExpmAction:
    def test_zero_matrix_is_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        out = expm_action(np.zeros((3, 3)), b, t=5.0, k=16)
        assert np.allclose(out, b)

    def test_zero_time_is_identity(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(4, 4))
        b = rng.normal(size=4)
        assert np.allclose(expm_action(A, b, t=0.0), b)

    def test_scalar_exponential(self):
        out = expm_action(np.array([[-1.0]]), np.array([1.0]), t=1.0, k=100_000)
        assert out[0] == pytest.approx(math.exp(-1.0), rel=1e-4)

    def test_matches_dense_expm_on_generator(self):
        rng = np.random.default_rng(2)
        A = random_generator(rng, 20)
        b = rng.normal(size=20)
        ref = expm(0.7 * A) @ b
        out = expm_action(A, b, t=0.7, k=4096)
        assert np.max(np.abs(out - ref)) <= 1e-4 * np.max(np.abs(ref))

    def test_error_halves_with_doubled_substeps(self):
        rng = np.random.default_rng(5)
        for trial in range(4):
            A = random_generator(rng, 12)
            b = rng.normal(size=12)
            ref = expm(0.5 * A) @ b
            errs = [
                np.max(np.abs(expm_action(A, b, 0.5, k=k) - ref))
                for k in (256, 512, 1024)
            ]
            assert errs[1] <= 0.75 * errs[0]
            assert errs[2] <= 0.75 * errs[1]

    def test_tridiagonal_path_matches_dense_path(self):
        rng = np.random.default_rng(8)
        n = 15
        T = TriDiag(
            np.abs(rng.normal(size=n - 1)),
            -2 - np.abs(rng.normal(size=n)),
            np.abs(rng.normal(size=n - 1)),
        )
        b = rng.normal(size=n)
        out_tri = expm_action(T, b, t=0.4, k=512)
        out_dense = expm_action(T.to_dense(), b, t=0.4, k=512)
        assert np.allclose(out_tri, out_dense, atol=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            expm_action(np.eye(2), np.ones(2), t=-1.0)
        with pytest.raises(ValueError):
            expm_action(np.eye(2), np.ones(2), t=1.0, k=0)


class TestGeneratorExpm:
    def test_matches_scaling_and_squaring(self):
        rng = np.random.default_rng(11)
        G = random_generator(rng, 18)
        assert np.max(np.abs(generator_expm(G, 0.9) - expm(0.9 * G))) <= 1e-12

    def test_subgenerator_rows(self):
        rng = np.random.default_rng(12)
        G = random_generator(rng, 10)
        G[0] = 0.0           # absorbing row
        G[4, 4] -= 3.0       # leaky row (killing)
        U = generator_expm(G, 1.7)
        assert np.max(np.abs(U - expm(1.7 * G))) <= 1e-12
        assert U.min() >= -1e-15
        assert U.sum(axis=1).max() <= 1.0 + 1e-12

    def test_rejects_negative_off_diagonal(self):
        G = np.array([[-1.0, 1.0], [-0.5, 0.5]])
        with pytest.raises(ValueError):
            generator_expm(G, 1.0)


class TestLemke:
    def test_nonnegative_psi_gives_zero(self):
        sol = lemke_solve(LCPProblem(np.eye(4), np.array([0.0, 1.0, 2.0, 0.5])))
        assert sol.solved and np.allclose(sol.z, 0.0)

    def test_identity_negative_psi(self):
        sol = lemke_solve(LCPProblem(np.eye(3), -np.ones(3)))
        assert sol.solved
        assert np.allclose(sol.z, 1.0, atol=1e-12)
        assert sol.complementarity <= 1e-12

    def test_matches_enumeration_on_p_matrices(self):
        rng = np.random.default_rng(42)
        for trial in range(60):
            n = int(rng.integers(1, 9))
            A, q = random_pd_lcp(rng, n)
            sol = lemke_solve(LCPProblem(A, q))
            z_ref = brute_force_lcp(A, q)
            assert sol.solved, f"trial {trial}: status {sol.status}"
            assert np.max(np.abs(sol.z - z_ref)) <= 1e-9, f"trial {trial}"
            # identical active sets
            assert np.array_equal(sol.z > 1e-9, z_ref > 1e-9)

    def test_fuzz_terminates_with_definite_status(self):
        rng = np.random.default_rng(123)
        counts = {s: 0 for s in LCPStatus}
        for _ in range(10_000):
            n = int(rng.integers(1, 13))
            A = rng.normal(size=(n, n))
            q = rng.normal(size=n)
            sol = lemke_solve(LCPProblem(A, q), max_pivots=2000)
            counts[sol.status] += 1
            if sol.solved:
                w = A @ sol.z + q
                assert np.min(sol.z) >= -1e-8
                assert np.min(w) >= -1e-7 * (1 + np.abs(q).max())
        assert counts[LCPStatus.SOLVED] > 0
        # indefinite matrices legitimately hit rays; cycling would show up
        # as MAX_ITERATIONS dominating
        assert counts[LCPStatus.MAX_ITERATIONS] <= 5

    def test_ray_termination_reported(self):
        # A maps everything negative: no complementary solution with q < 0
        A = -np.eye(2)
        sol = lemke_solve(LCPProblem(A, np.array([-1.0, -1.0])))
        assert sol.status is LCPStatus.RAY_TERMINATION

    def test_pivot_trace_logging(self, monkeypatch, caplog):
        monkeypatch.setenv("PARISIAN_LCP_TRACE", "1")
        with caplog.at_level(logging.INFO, logger="parisian.lcp"):
            lemke_solve(LCPProblem(np.eye(2), -np.ones(2)))
        assert any("enter" in r.message or "lemke" in r.message for r in caplog.records)


def obstacle_problem(n=200, load=8.0, left_height=1.0):
    """Taut string with fixed left end pushed onto a zero obstacle.

    u'' = load where u > 0, u(0) = left_height, u(1) = 0; contact starts at
    s = sqrt(2*left_height/load) (= 0.5 for the defaults).
    """
    h = 1.0 / (n + 1)
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    A = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    psi = np.full(n, load)
    psi[0] = load - left_height / h**2  # Dirichlet value folded into the rhs
    return A, psi, math.sqrt(2.0 * left_height / load)


class TestPsorAndFriends:
    def test_trivial_identity(self):
        sol = psor_solve(LCPProblem(np.eye(3), np.array([1.0, 0.5, 2.0])))
        assert sol.solved and np.allclose(sol.z, 0.0)

    def test_agrees_with_lemke_on_random_instances(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n = int(rng.integers(2, 9))
            A, q = random_pd_lcp(rng, n)
            prob = LCPProblem(A, q)
            z_l = lemke_solve(prob).z
            z_p = psor_solve(prob).z
            z_pi = policy_solve(prob).z
            assert np.max(np.abs(z_p - z_l)) <= 1e-7
            assert np.max(np.abs(z_pi - z_l)) <= 1e-7

    def test_obstacle_contact_point(self):
        n = 200
        A, psi, s = obstacle_problem(n)
        prob = LCPProblem(A, psi)
        for solver in (psor_solve, policy_solve, lemke_solve):
            sol = solver(prob)
            assert sol.solved
            # first index where the string touches the obstacle (z == 0)
            touching = np.flatnonzero(sol.z <= 1e-9)
            contact_idx = touching[0]
            predicted = s * (n + 1) - 1
            assert abs(contact_idx - predicted) <= 1.0, solver.__name__

    def test_projected_jacobi_on_diagonally_dominant(self):
        rng = np.random.default_rng(21)
        n = 40
        A = 3.0 * np.eye(n) + rng.uniform(0.0, 0.04, size=(n, n))
        q = rng.normal(size=n)
        prob = LCPProblem(A, q)
        z_j = projected_jacobi(prob).z
        z_l = lemke_solve(prob).z
        assert np.max(np.abs(z_j - z_l)) <= 1e-8

    def test_policy_solve_sparse_matches_dense(self):
        from scipy import sparse

        rng = np.random.default_rng(31)
        n = 60
        A, q = random_pd_lcp(rng, n)
        A = np.where(np.abs(A) < 1.0, 0.0, A) + n * np.eye(n)
        dense = policy_solve(LCPProblem(A, q))
        sp = policy_solve(LCPProblem(sparse.csr_matrix(A), q))
        assert dense.solved and sp.solved
        assert np.max(np.abs(dense.z - sp.z)) <= 1e-9

    def test_positive_diagonal_required(self):
        bad = LCPProblem(np.array([[0.0, 1.0], [1.0, 1.0]]), np.ones(2))
        with pytest.raises(ValueError):
            psor_solve(bad)
        with pytest.raises(ValueError):
            projected_jacobi(bad)


class TestSolutionInvariants:
    def test_every_solved_solution_is_complementary(self):
        rng = np.random.default_rng(77)
        solvers = [lemke_solve, psor_solve, policy_solve, projected_jacobi]
        for trial in range(20):
            n = int(rng.integers(2, 10))
            A, q = random_pd_lcp(rng, n)
            prob = LCPProblem(A, q)
            for solver in solvers:
                sol = solver(prob)
                if not sol.solved:
                    continue
                w = A @ sol.z + q
                tol = 1e-8 * (1 + np.abs(q).max())
                assert np.min(sol.z) >= -tol
                assert np.min(w) >= -tol
                assert abs(sol.z @ w) <= 1e-8 * (
                    1 + np.linalg.norm(sol.z) * np.linalg.norm(w)
                )
                assert complementarity_residual(prob, sol.z) <= 1e-7 * (
                    1 + np.abs(q).max()
                )

    def test_problem_validation(self):
        with pytest.raises(ValueError):
            LCPProblem(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValueError):
            LCPProblem(np.eye(3), np.zeros(2))
        with pytest.raises(ValueError):
            LCPProblem(np.eye(2), np.array([np.nan, 0.0]))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_lemke_solution_matches_enumeration_property(n, seed):
    rng = np.random.default_rng(seed)
    A, q = random_pd_lcp(rng, n)
    sol = lemke_solve(LCPProblem(A, q))
    z_ref = brute_force_lcp(A, q)
    assert sol.solved
    assert np.max(np.abs(sol.z - z_ref)) <= 1e-8
