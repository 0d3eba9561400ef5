"""Core numerical kernels.

Tridiagonal and dense linear solves, matrix-exponential actions and a suite of
linear-complementarity (LCP) solvers.  The LCP convention throughout is

    find z >= 0 with w = A z + psi >= 0 and z . w = 0.

``lemke_solve`` is the pivoting solver used for small/medium dense problems,
``psor_solve`` an independent iterative cross-check, ``policy_solve`` a
primal-dual active-set method for large sparse/banded systems, and
``projected_jacobi`` a vectorized fixed-point sweep for diagonally dominant
slice problems.  All functions are pure; parallel calls on disjoint inputs are
safe.  Set ``PARISIAN_LCP_TRACE=1`` to log Lemke pivot sequences.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve, solve_banded
from scipy.sparse.linalg import splu

_lcp_log = logging.getLogger("parisian.lcp")


# ---------------------------------------------------------------------------
# tridiagonal matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriDiag:
    """Tridiagonal matrix stored as (sub, main, super) diagonal arrays."""

    sub: np.ndarray
    main: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        n = len(self.main)
        if len(self.sub) != n - 1 or len(self.sup) != n - 1:
            raise ValueError(
                f"diagonal lengths must be ({n-1}, {n}, {n-1}); got "
                f"({len(self.sub)}, {n}, {len(self.sup)})"
            )

    @property
    def n(self) -> int:
        return len(self.main)

    def to_banded(self) -> np.ndarray:
        """LAPACK banded layout (3, n) with rows (super, main, sub)."""
        n = self.n
        ab = np.zeros((3, n))
        ab[0, 1:] = self.sup
        ab[1, :] = self.main
        ab[2, :-1] = self.sub
        return ab

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.diag(self.main)
        out[np.arange(n - 1) + 1, np.arange(n - 1)] = self.sub
        out[np.arange(n - 1), np.arange(n - 1) + 1] = self.sup
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = self.main * x
        out[:-1] += self.sup * x[1:]
        out[1:] += self.sub * x[:-1]
        return out

    def norm_inf(self) -> float:
        rowsum = np.abs(self.main).astype(float)
        rowsum[:-1] += np.abs(self.sup)
        rowsum[1:] += np.abs(self.sub)
        return float(rowsum.max()) if self.n else 0.0


MatrixLike = Union[np.ndarray, TriDiag, sparse.spmatrix]


def _as_dense(A: MatrixLike) -> np.ndarray:
    if isinstance(A, TriDiag):
        return A.to_dense()
    if sparse.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def _matvec(A: MatrixLike, x: np.ndarray) -> np.ndarray:
    if isinstance(A, TriDiag):
        return A.matvec(x)
    return A @ x


def _norm_inf(A: MatrixLike) -> float:
    if isinstance(A, TriDiag):
        return A.norm_inf()
    if sparse.issparse(A):
        return float(abs(A).sum(axis=1).max())
    return float(np.abs(A).sum(axis=1).max()) if A.size else 0.0


def solve_tridiag(A: TriDiag, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for tridiagonal A (b may be a vector or a matrix)."""

    try:
        return solve_banded((1, 1), A.to_banded(), b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"singular tridiagonal system ({exc})"
        ) from exc


# ---------------------------------------------------------------------------
# matrix exponential actions
# ---------------------------------------------------------------------------


def expm_action(
    A: MatrixLike,
    b: np.ndarray,
    t: float,
    k: Optional[int] = None,
) -> np.ndarray:
    """Approximate exp(t A) b by k backward-Euler substeps.

    Each substep solves (I - t A / k) x_{j+1} = x_j; for tridiagonal A a
    substep is a tridiagonal solve.  The global error is first order in 1/k.
    Default k = max(64, ceil(8 t ||A||_inf)).
    """

    if t < 0:
        raise ValueError("t must be nonnegative")
    if k is None:
        k = max(64, int(math.ceil(8.0 * t * _norm_inf(A))))
    if k < 1:
        raise ValueError("substep count k must be >= 1")
    x = np.array(b, dtype=float, copy=True)
    if t == 0.0:
        return x
    h = t / k
    if isinstance(A, TriDiag):
        step = TriDiag(-h * A.sub, 1.0 - h * A.main, -h * A.sup)
        ab = step.to_banded()
        for _ in range(k):
            x = solve_banded((1, 1), ab, x)
        return x
    if sparse.issparse(A):
        n = A.shape[0]
        lu = splu((sparse.identity(n, format="csc") - h * A.tocsc()).tocsc())
        for _ in range(k):
            x = lu.solve(x)
        return x
    n = A.shape[0]
    lu = lu_factor(np.eye(n) - h * np.asarray(A, dtype=float))
    for _ in range(k):
        x = lu_solve(lu, x)
    return x


def generator_expm(G: MatrixLike, t: float, tol: float = 1e-14) -> np.ndarray:
    """Dense exp(t G) for a (sub-)generator G via uniformization.

    Requires nonnegative off-diagonal entries and row sums <= 0 so that
    P = I + G/rate is substochastic; the Poisson-weighted power series then
    has nonnegative terms and is truncated once the remaining Poisson tail
    drops below ``tol``.  Exact to truncation level (no time-step bias).
    """

    if t < 0:
        raise ValueError("t must be nonnegative")
    Gd = _as_dense(G)
    n = Gd.shape[0]
    if t == 0.0 or n == 0:
        return np.eye(n)
    rate = float(-Gd.diagonal().min())
    if rate <= 0.0:
        # zero generator (all rates vanish)
        return np.eye(n)
    off = Gd - np.diag(Gd.diagonal())
    if off.min() < -1e-10 * max(rate, 1.0):
        raise ValueError("generator_expm needs nonnegative off-diagonals")
    P = Gd / rate + np.eye(n)
    a = rate * t
    weight = math.exp(-a)
    term = np.eye(n)
    out = weight * term
    consumed = weight
    kmax = int(a + 40.0 * math.sqrt(a + 1.0) + 40)
    for j in range(1, kmax + 1):
        term = term @ P
        weight *= a / j
        out += weight * term
        consumed += weight
        if 1.0 - consumed < tol and j > a:
            break
    return out


# ---------------------------------------------------------------------------
# linear complementarity problems
# ---------------------------------------------------------------------------


class LCPStatus(enum.Enum):
    SOLVED = "solved"
    RAY_TERMINATION = "ray_termination"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class LCPProblem:
    """LCP data (A, psi): find z >= 0, A z + psi >= 0, z.(A z + psi) = 0."""

    A: MatrixLike
    psi: np.ndarray

    def __post_init__(self):
        n = self.A.n if isinstance(self.A, TriDiag) else self.A.shape[0]
        shape = self.A.shape if not isinstance(self.A, TriDiag) else (n, n)
        if shape[0] != shape[1]:
            raise ValueError("A must be square")
        if len(self.psi) != n:
            raise ValueError("psi length must match A dimension")
        if not np.all(np.isfinite(self.psi)):
            raise ValueError("psi must be finite")

    @property
    def n(self) -> int:
        return self.A.n if isinstance(self.A, TriDiag) else self.A.shape[0]

    def residual_w(self, z: np.ndarray) -> np.ndarray:
        return _matvec(self.A, z) + self.psi


@dataclass(frozen=True)
class LCPSolution:
    z: np.ndarray
    complementarity: float
    iterations: int
    status: LCPStatus

    @property
    def solved(self) -> bool:
        return self.status is LCPStatus.SOLVED


def complementarity_residual(problem: LCPProblem, z: np.ndarray) -> float:
    """max_i |min(z_i, (A z + psi)_i)|, the natural LCP residual."""

    w = problem.residual_w(z)
    return float(np.max(np.abs(np.minimum(z, w)))) if len(z) else 0.0


def _finish(problem, z, iters, status) -> LCPSolution:
    return LCPSolution(
        z=np.asarray(z, dtype=float),
        complementarity=complementarity_residual(problem, z),
        iterations=iters,
        status=status,
    )


def lemke_solve(
    problem: LCPProblem,
    max_pivots: Optional[int] = None,
    tol: float = 1e-11,
) -> LCPSolution:
    """Lemke's complementary pivoting with an all-ones covering vector.

    Ties in the minimum-ratio test are broken lexicographically (comparing
    against the running basis-inverse columns), which rules out cycling.  Ray
    termination is reported, never silently converted into a solution.
    """

    n = problem.n
    psi = np.asarray(problem.psi, dtype=float)
    if max_pivots is None:
        max_pivots = 50 * n + 1000
    if np.min(psi, initial=0.0) >= 0.0:
        return _finish(problem, np.zeros(n), 0, LCPStatus.SOLVED)

    trace = os.environ.get("PARISIAN_LCP_TRACE") == "1"
    A = _as_dense(problem.A)
    # tableau rows: basic-variable equations over columns
    # [w_0..w_{n-1} | z_0..z_{n-1} | z_art | rhs]
    T = np.zeros((n, 2 * n + 2))
    T[:, :n] = np.eye(n)
    T[:, n : 2 * n] = -A
    T[:, 2 * n] = -1.0
    T[:, 2 * n + 1] = psi
    basis = np.arange(n)  # w_i basic everywhere
    art = 2 * n
    rhs = 2 * n + 1
    scale = max(1.0, float(np.abs(T).max()))

    def pivot(row, col):
        T[row] = T[row] / T[row, col]
        colvals = T[:, col].copy()
        colvals[row] = 0.0
        T[...] -= np.outer(colvals, T[row])
        left = basis[row]
        basis[row] = col
        return left

    # drive the artificial variable in against the most negative slack
    row = int(np.argmin(T[:, rhs]))
    leaving = pivot(row, art)
    entering = leaving + n  # complement of the w that just left
    if trace:
        _lcp_log.info("lemke start: n=%d art enters, w_%d leaves", n, leaving)

    lex_cols = [rhs] + list(range(n))
    for it in range(1, max_pivots + 1):
        col = T[:, entering]
        eligible = np.flatnonzero(col > tol * scale)
        if eligible.size == 0:
            if trace:
                _lcp_log.info("lemke ray termination at pivot %d", it)
            z = np.zeros(n)
            in_z = (basis >= n) & (basis < 2 * n)
            z[basis[in_z] - n] = T[in_z, rhs]
            return _finish(problem, z, it, LCPStatus.RAY_TERMINATION)
        # lexicographic minimum-ratio test
        cand = eligible
        for c in lex_cols:
            ratios = T[cand, c] / T[cand, entering]
            best = ratios.min()
            cand = cand[ratios <= best + tol * max(1.0, abs(best))]
            if cand.size == 1:
                break
        row = int(cand[0])
        left = pivot(row, entering)
        if trace:
            _lcp_log.info(
                "pivot %d: enter %s leave %s",
                it,
                _var_name(entering, n),
                _var_name(left, n),
            )
        if left == art:
            z = np.zeros(n)
            in_z = (basis >= n) & (basis < 2 * n)
            z[basis[in_z] - n] = T[in_z, rhs]
            z = np.maximum(z, 0.0)
            return _finish(problem, z, it, LCPStatus.SOLVED)
        entering = left + n if left < n else left - n
    z = np.zeros(n)
    in_z = (basis >= n) & (basis < 2 * n)
    z[basis[in_z] - n] = T[in_z, rhs]
    return _finish(problem, z, max_pivots, LCPStatus.MAX_ITERATIONS)


def _var_name(idx: int, n: int) -> str:
    if idx < n:
        return f"w_{idx}"
    if idx < 2 * n:
        return f"z_{idx - n}"
    return "z_art"


def psor_solve(
    problem: LCPProblem,
    relaxation: float = 1.2,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    z0: Optional[np.ndarray] = None,
) -> LCPSolution:
    """Projected SOR sweeps (Gauss-Seidel order).  Needs a positive diagonal.

    Intended as an independent small-scale cross-check of the pivoting and
    active-set solvers, not as the production path for large systems.
    """

    A = _as_dense(problem.A)
    psi = np.asarray(problem.psi, dtype=float)
    n = problem.n
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise ValueError("psor_solve requires a positive diagonal")
    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    z = np.maximum(z, 0.0)
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(n):
            w_i = A[i] @ z + psi[i]
            z_new = max(0.0, z[i] - relaxation * w_i / diag[i])
            delta = max(delta, abs(z_new - z[i]))
            z[i] = z_new
        if delta <= tol:
            res = complementarity_residual(problem, z)
            if res <= max(tol * 100, 1e-8):
                return _finish(problem, z, it, LCPStatus.SOLVED)
    return _finish(problem, z, max_iter, LCPStatus.MAX_ITERATIONS)


def policy_solve(
    problem: LCPProblem,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    active0: Optional[np.ndarray] = None,
) -> LCPSolution:
    """Primal-dual active-set (policy) iteration.

    Maintains a guess of the active set {i : z_i = 0}; on the complement it
    solves the reduced linear system A_FF z_F = -psi_F exactly, then updates
    the sets from the signs of z and w = A z + psi.  Converges in finitely
    many iterations for the M-matrix-like systems produced by the pricers;
    each iteration costs one sparse or dense factorization.  For banded
    operators the free boundary can travel only one node per iteration, so
    the default iteration cap scales with the problem size when ``A`` is
    sparse (where an iteration is cheap).
    """

    n = problem.n
    psi = np.asarray(problem.psi, dtype=float)
    A = problem.A
    use_sparse = sparse.issparse(A)
    if max_iter is None:
        max_iter = max(200, 4 * n) if use_sparse else 200
    Ad = None if use_sparse else _as_dense(A)
    Acsc = A.tocsc() if use_sparse else None

    active = (psi >= 0.0) if active0 is None else np.array(active0, dtype=bool)
    prev_active = None
    for it in range(1, max_iter + 1):
        free = ~active
        z = np.zeros(n)
        idx = np.flatnonzero(free)
        if idx.size:
            if use_sparse:
                sub = Acsc[idx][:, idx]
                z[idx] = splu(sub.tocsc()).solve(-psi[idx])
            else:
                z[idx] = np.linalg.solve(Ad[np.ix_(idx, idx)], -psi[idx])
        w = problem.residual_w(z)
        w[idx] = 0.0  # exact by construction; remove round-off
        new_active = (z - w) < 0.0
        # tolerances follow the problem's scale: z lives on the solution
        # scale, w on the scale of psi
        z_scale = max(1.0, float(np.max(np.abs(z), initial=0.0)))
        w_scale = max(1.0, float(np.max(np.abs(psi), initial=0.0)))
        if prev_active is not None and np.array_equal(new_active, active):
            res = complementarity_residual(problem, np.maximum(z, 0.0))
            ok = res <= max(100 * tol, 1e-8) * z_scale
            status = LCPStatus.SOLVED if ok else LCPStatus.MAX_ITERATIONS
            return _finish(problem, np.maximum(z, 0.0), it, status)
        if (
            np.min(z, initial=0.0) >= -tol * z_scale
            and np.min(w, initial=0.0) >= -tol * w_scale
        ):
            return _finish(problem, np.maximum(z, 0.0), it, LCPStatus.SOLVED)
        prev_active = active
        active = new_active
    return _finish(problem, np.maximum(z, 0.0), max_iter, LCPStatus.MAX_ITERATIONS)


def projected_jacobi(
    problem: LCPProblem,
    relaxation: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    z0: Optional[np.ndarray] = None,
) -> LCPSolution:
    """Damped projected Jacobi sweeps z <- max(0, z - w*(Az+psi)/diag).

    Fully vectorized (one matrix-vector product per sweep), so it is the
    method of choice for large strictly diagonally dominant slice systems
    where factorizations are too expensive; warm starts via ``z0``.
    """

    A = problem.A
    psi = np.asarray(problem.psi, dtype=float)
    n = problem.n
    if isinstance(A, TriDiag):
        diag = A.main
    elif sparse.issparse(A):
        diag = A.diagonal()
    else:
        diag = np.asarray(A).diagonal()
    if np.any(diag <= 0):
        raise ValueError("projected_jacobi requires a positive diagonal")
    z = np.zeros(n) if z0 is None else np.maximum(np.asarray(z0, dtype=float), 0.0)
    for it in range(1, max_iter + 1):
        w = _matvec(A, z) + psi
        z_new = np.maximum(0.0, z - relaxation * w / diag)
        delta = float(np.max(np.abs(z_new - z), initial=0.0))
        z = z_new
        if delta <= tol:
            res = complementarity_residual(problem, z)
            if res <= max(100 * tol, 1e-8):
                return _finish(problem, z, it, LCPStatus.SOLVED)
    return _finish(problem, z, max_iter, LCPStatus.MAX_ITERATIONS)
