"""Down-out Parisian option pricing on duration-augmented chains.

A down-out contract dies once the spot stays below the barrier for the
window length, so the excursion duration is part of the state.  The chain
is augmented with a duration ladder: level 0 carries every spatial state,
levels 1..K carry only the below-barrier states, and a Poisson clock with
rate 1/dtick advances the level while the spot is below the barrier.  Any
up-cross resets the level to 0; the top level (first duration value past
the window) is absorbing and worthless, which encodes the knock-out.

Perpetual prices solve one linear complementarity problem on the ladder,
min((rate I - A) C, C - payoff) = 0; finite-maturity prices run a backward
slice recursion min(((1 + rate dt) I - dt A) C(t) - C(t + dt), C - payoff)
= 0 from zero past the horizon.  Tridiagonal chains keep the stacked ladder
operator sparse; dense jump chains avoid stacking altogether whenever the
payoff vanishes below the barrier, by eliminating the duration levels (no
exercise happens there) down to base-level problems of the spatial size.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.linalg import lu_factor, lu_solve

from .ctmc import GeneratorMatrix, SpatialGrid, TimeGrid
from .models import ModelSpec
from .numerics import LCPProblem
from .pricer_downin import (
    ContractSpec,
    Flavor,
    _contiguous_below,
    _dense_and_below,
    _require_solved,
    _solve_lcp,
)

_log = logging.getLogger("parisian.downout")


@dataclass(frozen=True)
class DurationLadder:
    """Slot bookkeeping for the (duration level, spatial state) chain.

    Level 0 holds all ``n_states`` spatial states in grid order; levels
    1..n_ticks hold the ``n_below`` below-barrier states.  Level n_ticks is
    the first duration strictly past the window (the knock-out level).
    """

    n_states: int
    below: np.ndarray
    n_ticks: int
    dtick: float

    def __post_init__(self):
        if self.n_ticks < 1:
            raise ValueError("need at least one duration tick past zero")
        if self.dtick <= 0:
            raise ValueError("duration tick must be positive")
        if len(self.below) != self.n_states:
            raise ValueError("below mask length must match state count")

    @property
    def n_below(self) -> int:
        return int(np.sum(self.below))

    @property
    def n_levels(self) -> int:
        return self.n_ticks + 1

    @property
    def total(self) -> int:
        return self.n_states + self.n_ticks * self.n_below

    @property
    def below_indices(self) -> np.ndarray:
        return np.flatnonzero(self.below)

    def slot(self, level: int, state: int) -> int:
        """Flat index of (duration level, spatial state)."""
        if level == 0:
            return state
        if not self.below[state]:
            raise IndexError("only below-barrier states exist above level 0")
        pos = int(np.searchsorted(self.below_indices, state))
        return self.n_states + (level - 1) * self.n_below + pos

    def level_slice(self, level: int) -> slice:
        """Slots of one duration level (level 0 spans all states)."""
        if level == 0:
            return slice(0, self.n_states)
        start = self.n_states + (level - 1) * self.n_below
        return slice(start, start + self.n_below)

    def stack_payoff(self, f: np.ndarray) -> np.ndarray:
        """Payoff on the ladder: zero on the knock-out level."""
        f = np.asarray(f, dtype=float)
        fb = f[self.below]
        parts = [f] + [fb] * (self.n_ticks - 1) + [np.zeros(self.n_below)]
        return np.concatenate(parts)


def build_ladder(
    window: float,
    dtick: float,
    below: np.ndarray,
) -> DurationLadder:
    """Duration ladder whose top level is the first tick past the window."""

    if window <= 0 or dtick <= 0:
        raise ValueError("window and duration tick must be positive")
    below = np.asarray(below, dtype=bool)
    n_ticks = int(math.floor(window / dtick * (1 + 1e-12))) + 1
    return DurationLadder(
        n_states=len(below), below=below, n_ticks=n_ticks, dtick=dtick
    )


def duration_generator(
    gen: Union[GeneratorMatrix, np.ndarray],
    ladder: DurationLadder,
    use_sparse: Optional[bool] = None,
):
    """Generator of the augmented (duration, state) chain.

    Rows follow the ladder layout.  While below the barrier the duration
    clock ticks up at rate 1/dtick and spatial moves keep the level, except
    that up-crosses land on level 0; the top level is absorbing.
    """

    if isinstance(gen, GeneratorMatrix):
        R, below = _dense_and_below(gen, None, None)
        if not np.array_equal(below, ladder.below):
            raise ValueError("generator below mask disagrees with the ladder")
    else:
        R, below = _dense_and_below(gen, None, ladder.below)
    N = ladder.n_states
    m = ladder.n_below
    bi = ladder.below_indices
    ai = np.flatnonzero(~ladder.below)
    tick = 1.0 / ladder.dtick
    total = ladder.total
    if use_sparse is None:
        # compare materialized sizes: the sparse layout only stores the
        # below-barrier blocks once per level, so it wins even for dense
        # spatial coupling whenever the ladder has several levels
        nnz_below = int(np.count_nonzero(R[bi, :])) if m else 0
        est_nnz = (
            int(np.count_nonzero(R))
            + max(ladder.n_ticks - 1, 0) * nnz_below
            + ladder.n_ticks * max(m, 1)
        )
        use_sparse = 2 * est_nnz < total * total

    if not use_sparse:
        A = np.zeros((total, total))
        A[:N, :N] = R
        for lvl in range(1, ladder.n_ticks):
            sl = ladder.level_slice(lvl)
            lvl_rows = np.arange(sl.start, sl.stop)
            A[np.ix_(lvl_rows, lvl_rows)] = R[np.ix_(bi, bi)]
            A[np.ix_(lvl_rows, ai)] = R[np.ix_(bi, ai)]
        # duration ticks: below rows push one level up and lose 1/dtick
        for lvl in range(ladder.n_ticks):
            sl = ladder.level_slice(lvl)
            lvl_rows = bi if lvl == 0 else np.arange(sl.start, sl.stop)
            nxt = ladder.level_slice(lvl + 1)
            A[lvl_rows, lvl_rows] -= tick
            A[lvl_rows, np.arange(nxt.start, nxt.stop)] += tick
        top = ladder.level_slice(ladder.n_ticks)
        A[top, :] = 0.0
        return A

    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    bpos = {int(s): k for k, s in enumerate(bi)}
    nz_by_row = [np.flatnonzero(R[x]) for x in range(N)]

    # level 0: full spatial coupling; below states also tick up
    for x in range(N):
        for y in nz_by_row[x]:
            put(x, int(y), R[x, y])
        if ladder.below[x]:
            put(x, x, -tick)
            put(x, N + bpos[x], tick)

    # levels 1..n_ticks-1: below-only spatial block, resets to level 0
    for lvl in range(1, ladder.n_ticks):
        base = N + (lvl - 1) * m
        for k, x in enumerate(bi):
            r = base + k
            for y in nz_by_row[int(x)]:
                y = int(y)
                if ladder.below[y]:
                    put(r, base + bpos[y], R[x, y])
                else:
                    put(r, y, R[x, y])
            put(r, r, -tick)
            put(r, base + m + k, tick)

    # top level: absorbing zero rows (no entries)
    return sparse.csr_matrix(
        (vals, (rows, cols)), shape=(total, total)
    )


def _identity_like(A):
    if sparse.issparse(A):
        return sparse.identity(A.shape[0], format="csr")
    return np.eye(A.shape[0])


@dataclass(frozen=True)
class PerpetualDownOutResult:
    """Value on the duration ladder; quoting happens at duration level 0."""

    values: np.ndarray
    ladder: DurationLadder
    model: ModelSpec
    grid: SpatialGrid

    @property
    def level0(self) -> np.ndarray:
        return self.values[: self.ladder.n_states]

    def level_values(self, level: int) -> np.ndarray:
        return self.values[self.ladder.level_slice(level)]

    def value_at(self, spot: float, level: int = 0) -> float:
        x = float(np.asarray(self.model.state_of_price(spot)))
        if level == 0:
            return self.grid.interp(self.level0, x)
        states = self.grid.states[self.ladder.below]
        return float(np.interp(x, states, self.level_values(level)))


def price_perpetual_downout(
    gen: Union[GeneratorMatrix, np.ndarray],
    contract: ContractSpec,
    model: ModelSpec,
    dtick: float,
    grid: Optional[SpatialGrid] = None,
    solver: str = "auto",
) -> PerpetualDownOutResult:
    """Perpetual down-out value: one complementarity problem on the ladder.

    ``solver="auto"`` stacks the ladder for tridiagonal chains and uses the
    duration-level elimination (``"reduced"``) for dense jump chains whose
    payoff vanishes below the barrier; explicit stacked-route solvers
    (``"policy"``, ``"lemke"``, ``"psor"``, ``"jacobi"``) are accepted too.
    """

    if not contract.is_perpetual:
        raise ValueError("contract must be perpetual")
    if contract.flavor is not Flavor.DOWN_OUT:
        raise ValueError("contract flavor must be down-out")
    if not model.time_homogeneous:
        raise ValueError("perpetual pricing needs a time-homogeneous model")
    if isinstance(gen, GeneratorMatrix) and grid is None:
        grid = gen.grid
    if grid is None:
        raise ValueError("need a spatial grid for plain matrix generators")

    L_state = contract.barrier_state(model)
    below = grid.states < L_state - 1e-12 * max(1.0, abs(L_state))
    if not _contiguous_below(below):
        raise ValueError("below-barrier states must form a prefix of the grid")
    ladder = build_ladder(contract.window, dtick, below)
    f0 = contract.payoff_states(model, grid.states)
    tridiag = isinstance(gen, GeneratorMatrix) and gen.is_tridiagonal
    reducible = ladder.n_below > 0 and _payoff_vanishes_below(f0, ladder.below)
    if solver == "auto":
        solver = "reduced" if (reducible and not tridiag) else "stacked"
    if solver == "reduced" and not reducible:
        raise ValueError(
            "level elimination needs a payoff that vanishes below the barrier"
        )

    start = time.perf_counter()
    if solver == "reduced":
        R, _ = _dense_and_below(gen, None, ladder.below)
        ops = _ReducedLadderOps(R, ladder, contract.rate)
        warm = _vanilla_active_guess(gen, contract, model, grid, ladder)
        if warm is not None:
            warm = warm[: ladder.n_states]
        sol = _require_solved(
            _solve_lcp(LCPProblem(ops.A_eff, ops.A_eff @ f0), "policy", warm=warm),
            "perpetual down-out (reduced)",
        )
        values = ops.expand(f0 + sol.z)
    else:
        A_gen = duration_generator(gen, ladder)
        Ident = _identity_like(A_gen)
        A = contract.rate * Ident - A_gen
        f = ladder.stack_payoff(f0)
        psi = A @ f
        if solver == "stacked":
            solver = "policy" if (sparse.issparse(A) or ladder.total > 600) else "lemke"
        warm = (
            _vanilla_active_guess(gen, contract, model, grid, ladder)
            if solver == "policy"
            else None
        )
        sol = _require_solved(
            _solve_lcp(LCPProblem(A, psi), solver, warm=warm), "perpetual down-out"
        )
        values = f + sol.z
    _log.info(
        "perpetual down-out LCP (%s): %.3fs, %d ladder states, %d iterations",
        solver, time.perf_counter() - start, ladder.total, sol.iterations,
    )
    return PerpetualDownOutResult(
        values=values, ladder=ladder, model=model, grid=grid
    )


def _vanilla_active_guess(gen, contract, model, grid, ladder):
    """Initial active set for policy iteration from the vanilla problem.

    The knock-out only lowers values, so the vanilla exercise region is a
    good starting guess on every duration level; it keeps the free-boundary
    travel short.
    """

    from .pricer_downin import vanilla_american_perpetual

    try:
        f = contract.payoff_states(model, grid.states)
        v = vanilla_american_perpetual(gen, f, contract.rate)
    except Exception:
        return None
    exercised = v <= f + 1e-12 * np.maximum(1.0, np.abs(f))
    parts = [exercised]
    parts += [exercised[ladder.below]] * (ladder.n_ticks - 1)
    parts += [np.ones(ladder.n_below, dtype=bool)]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# elimination of the strictly-below duration levels
# ---------------------------------------------------------------------------


def _payoff_vanishes_below(f: np.ndarray, below: np.ndarray) -> bool:
    return bool(np.all(np.asarray(f, dtype=float)[below] == 0.0))


class _ReducedLadderOps:
    """Closes the duration levels >= 1 in terms of the base level.

    When the payoff is identically zero on the below-barrier states, no
    exercise can happen while the duration clock is running, so every slot
    on levels 1..n_ticks-1 satisfies a plain linear equation

        Q C_k = source_k + B C_0[above] + cup * C_{k+1},    C_top = 0,

    with the same below-barrier block Q for every level.  Backward
    substitution writes C_k = M_k + P_k @ C_0[above]; plugging level 1 into
    the base-level rows leaves a complementarity problem over the spatial
    states alone, with the level coupling folded into an extra block on the
    below rows.  One LU factorization of Q is shared by everything, which
    keeps dense jump models tractable where the stacked ladder operator
    would be far too large to factor.

    ``dt=None`` builds the perpetual operator rate*I - A; otherwise the
    backward-slice operator (1 + rate*dt)*I - dt*A.
    """

    def __init__(
        self,
        R: np.ndarray,
        ladder: DurationLadder,
        rate: float,
        dt: Optional[float] = None,
    ):
        if ladder.n_below == 0:
            raise ValueError("level elimination needs below-barrier states")
        R = np.asarray(R, dtype=float)
        bi = ladder.below_indices
        ai = np.flatnonzero(~ladder.below)
        tick = 1.0 / ladder.dtick
        if dt is None:
            a0, cG = rate, 1.0
        else:
            a0, cG = 1.0 + rate * dt, dt
        cup = cG * tick
        m, N = len(bi), ladder.n_states

        Q = (a0 + cup) * np.eye(m) - cG * R[np.ix_(bi, bi)]
        luQ = lu_factor(Q)
        B = cG * R[np.ix_(bi, ai)]
        P: List[Optional[np.ndarray]] = [None] * (ladder.n_ticks + 1)
        P[ladder.n_ticks] = np.zeros((m, len(ai)))
        for k in range(ladder.n_ticks - 1, 0, -1):
            P[k] = lu_solve(luQ, B + cup * P[k + 1])

        A = a0 * np.eye(N) - cG * R
        A[bi, bi] += cup
        if len(ai):
            # level-1 feedback; P[1] is the zero map when the first tick
            # already knocks out, so this is a no-op there
            A[np.ix_(bi, ai)] -= cup * P[1]

        self.ladder = ladder
        self.bi = bi
        self.ai = ai
        self.cup = cup
        self.luQ = luQ
        self.P = P
        self.A_eff = A

    def sources(self, c_next: np.ndarray):
        """Per-level source terms M_k from the next clock slice.

        Returns the effective base-level source q (next-slice base values
        plus the level-1 feed-in on the below rows) and the list M for
        reconstruction.
        """

        ladder = self.ladder
        M: List[Optional[np.ndarray]] = [None] * (ladder.n_ticks + 1)
        M[ladder.n_ticks] = np.zeros(ladder.n_below)
        for k in range(ladder.n_ticks - 1, 0, -1):
            M[k] = lu_solve(
                self.luQ, c_next[ladder.level_slice(k)] + self.cup * M[k + 1]
            )
        q = np.array(c_next[: ladder.n_states], dtype=float, copy=True)
        q[self.bi] += self.cup * M[1]
        return q, M

    def expand(
        self, c0: np.ndarray, M: Optional[List[Optional[np.ndarray]]] = None
    ) -> np.ndarray:
        """Stacked ladder values from the base-level solution."""

        ladder = self.ladder
        out = np.zeros(ladder.total)
        out[: ladder.n_states] = c0
        ca = c0[self.ai]
        for k in range(1, ladder.n_ticks):
            vals = self.P[k] @ ca
            if M is not None:
                vals = vals + M[k]
            out[ladder.level_slice(k)] = vals
        return out


@dataclass(frozen=True)
class FiniteDownOutResult:
    """Price surface over (clock slice, ladder slot)."""

    values: np.ndarray
    times: np.ndarray
    ladder: DurationLadder
    model: ModelSpec
    grid: SpatialGrid

    @property
    def level0(self) -> np.ndarray:
        return self.values[:, : self.ladder.n_states]

    def value_at(self, spot: float, slice_idx: int = 0, level: int = 0) -> float:
        x = float(np.asarray(self.model.state_of_price(spot)))
        if level == 0:
            return self.grid.interp(self.level0[slice_idx], x)
        states = self.grid.states[self.ladder.below]
        vals = self.values[slice_idx, self.ladder.level_slice(level)]
        return float(np.interp(x, states, vals))


def price_finite_downout(
    model: ModelSpec,
    grid: SpatialGrid,
    timegrid: TimeGrid,
    contract: ContractSpec,
    dtick: float,
    gen: Optional[Union[GeneratorMatrix, Sequence[GeneratorMatrix]]] = None,
    rate_policy: str = "error",
    solver: str = "auto",
) -> FiniteDownOutResult:
    """Backward recursion for the finite-maturity down-out surface.

    Slice values are prices at that slice (not pre-discounted): each step
    back multiplies the continuation by 1/(1 + rate dt).

    ``solver="auto"`` picks the route per operator shape: tridiagonal
    chains run the stacked ladder with sparse policy iteration; dense jump
    chains with a payoff that vanishes below the barrier eliminate the
    duration levels (``"reduced"``) and solve base-level problems only;
    anything else falls back to matrix-free projected Jacobi sweeps on the
    stacked ladder.  Passing ``"policy"``, ``"jacobi"``, ``"psor"`` or
    ``"lemke"`` forces the stacked route with that solver.
    """

    from .ctmc import build_generator

    if contract.is_perpetual:
        raise ValueError("contract must have finite maturity")
    if contract.flavor is not Flavor.DOWN_OUT:
        raise ValueError("contract flavor must be down-out")

    J = timegrid.idx_t_plus
    dt = timegrid.dt
    times = timegrid.times
    n_slices = J + 1

    L_state = contract.barrier_state(model)
    below = grid.states < L_state - 1e-12 * max(1.0, abs(L_state))
    if not _contiguous_below(below):
        raise ValueError("below-barrier states must form a prefix of the grid")
    ladder = build_ladder(contract.window, dtick, below)

    if gen is None:
        if model.time_homogeneous:
            gens = [build_generator(model, grid, 0.0, rate_policy)] * n_slices
        else:
            gens = [
                build_generator(model, grid, float(t), rate_policy) for t in times
            ]
    else:
        from .pricer_downin import _gen_sequence

        gens = _gen_sequence(gen, n_slices)

    f0 = contract.payoff_states(model, grid.states)
    rate = contract.rate
    uniq_gens = list({id(g): g for g in gens}.values())
    tridiag = all(
        isinstance(g, GeneratorMatrix) and g.is_tridiagonal for g in uniq_gens
    )
    reducible = ladder.n_below > 0 and _payoff_vanishes_below(f0, ladder.below)
    if solver == "auto":
        if tridiag:
            solver = "policy"
        elif reducible:
            solver = "reduced"
        else:
            solver = "jacobi"
    if solver == "reduced" and not reducible:
        raise ValueError(
            "level elimination needs a payoff that vanishes below the barrier"
        )

    C = np.zeros((n_slices, ladder.total))
    start = time.perf_counter()
    if solver == "reduced":
        ops = {}

        def slice_ops(j):
            key = id(gens[j])
            if key not in ops:
                R, _ = _dense_and_below(gens[j], None, ladder.below)
                ops[key] = _ReducedLadderOps(R, ladder, rate, dt=dt)
            return ops[key]

        warm = None
        for j in range(J - 1, -1, -1):
            red = slice_ops(j)
            q, M = red.sources(C[j + 1])
            psi = red.A_eff @ f0 - q
            sol = _require_solved(
                _solve_lcp(LCPProblem(red.A_eff, psi), "policy", warm=warm),
                "down-out slice (reduced)",
            )
            C[j] = red.expand(f0 + sol.z, M)
            warm = sol.z <= 0.0
    else:
        f = ladder.stack_payoff(f0)
        ops = {}

        def slice_operator(j):
            key = id(gens[j])
            if key not in ops:
                A_gen = duration_generator(gens[j], ladder)
                Ident = _identity_like(A_gen)
                ops[key] = (1.0 + rate * dt) * Ident - dt * A_gen
            return ops[key]

        warm = None
        for j in range(J - 1, -1, -1):
            A = slice_operator(j)
            psi = A @ f - C[j + 1]
            sol = _require_solved(
                _solve_lcp(LCPProblem(A, psi), solver, warm=warm),
                "down-out slice",
            )
            C[j] = f + sol.z
            warm = (sol.z <= 0.0) if solver == "policy" else sol.z
    _log.info(
        "finite down-out recursion (%s): %.3fs for %d slices, %d ladder states",
        solver, time.perf_counter() - start, n_slices, ladder.total,
    )
    return FiniteDownOutResult(
        values=C, times=times, ladder=ladder, model=model, grid=grid
    )
