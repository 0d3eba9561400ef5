"""Independent verification engines used by the test suite.

Everything here recomputes quantities the pricing modules produce, through
deliberately different numerical routes: fixed-point value iteration on
uniformized chains instead of complementarity pivoting or factorized
solves, exhaustive complementary-basis enumeration for small LCPs, dense
matrix exponentials for excursion kernels instead of resolvent algebra,
and Monte-Carlo estimation delegating path generation to
``ctmc.simulate_paths``.  Nothing in the pricing modules imports from
here, so a disagreement implicates the pipeline under test rather than a
shared subroutine.

All engines are desk-scale: dense, O(states^3) or slower, and meant for
dozens of states -- they trade speed for transparency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import expm

from .ctmc import GeneratorMatrix, ParisianSimResult, simulate_paths

__all__ = [
    "UniformizedChain",
    "value_iterate_american",
    "lcp_by_enumeration",
    "dp_parisian_lattice",
    "mc_transform_row",
]


# ---------------------------------------------------------------------------
# uniformization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformizedChain:
    """Discrete-time view of a CTMC sampled at Poisson epochs.

    ``lam`` is the uniformization rate (the largest total exit rate) and
    ``probs`` the one-step matrix I + G/lam.  Exponential holding times
    make discounting exact per step: E[e^{-r H}] = lam / (lam + r).
    """

    lam: float
    probs: np.ndarray

    def __post_init__(self):
        P = self.probs
        if self.lam < 0:
            raise ValueError("uniformization rate must be nonnegative")
        if np.min(P) < -1e-12:
            raise ValueError("one-step probabilities must be nonnegative")
        rows = P.sum(axis=1)
        # killing rows are legitimately substochastic; above 1 is an error
        if np.max(rows, initial=0.0) > 1.0 + 1e-12:
            raise ValueError("one-step matrix must be (sub)stochastic")

    @classmethod
    def from_generator(
        cls, gen: Union[GeneratorMatrix, np.ndarray]
    ) -> "UniformizedChain":
        R = gen.as_dense() if isinstance(gen, GeneratorMatrix) else np.asarray(gen, float)
        lam = float(np.max(-np.diag(R), initial=0.0))
        if lam <= 0.0:
            return cls(lam=0.0, probs=np.eye(R.shape[0]))
        P = np.eye(R.shape[0]) + R / lam
        return cls(lam=lam, probs=np.maximum(P, 0.0))

    def step(self, v: np.ndarray) -> np.ndarray:
        return self.probs @ v


def _fixed_point_stopping(
    chain: UniformizedChain,
    obstacle: np.ndarray,
    kill: float,
    source_rate: float = 0.0,
    source: Optional[np.ndarray] = None,
    tol: float = 1e-11,
    max_iter: int = 5_000_000,
    v0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Fixed point of v = max(obstacle, (lam P v + source_rate*source)/(lam+kill+source_rate)).

    This is the optimal-stopping equation for the chain killed at rate
    ``kill``, with an extra competing exponential clock of rate
    ``source_rate`` paying ``source`` when it rings.  The map contracts
    with factor lam/(lam+kill+source_rate), so kill + source_rate > 0
    guarantees geometric convergence; the loop stops once the remaining
    geometric tail is below tol.
    """

    lam = chain.lam
    denom = lam + kill + source_rate
    if denom <= 0:
        raise ValueError("need kill + source_rate > 0 or a moving chain")
    rho = lam / denom
    if rho >= 1.0:
        raise ValueError("contraction requires kill + source_rate > 0")
    add = 0.0 if source is None else (source_rate / denom) * np.asarray(source, float)
    v = np.maximum(obstacle, add) if v0 is None else np.asarray(v0, float)
    gain = rho / (1.0 - rho) if rho > 0 else 0.0
    for _ in range(max_iter):
        v_new = np.maximum(obstacle, rho * chain.step(v) + add)
        delta = float(np.max(np.abs(v_new - v), initial=0.0))
        v = v_new
        if delta * gain <= tol:
            return v
    raise RuntimeError("value iteration did not converge (tol %g)" % tol)


def value_iterate_american(
    chain: UniformizedChain,
    f: np.ndarray,
    r: float,
    tol: float = 1e-10,
    max_iter: int = 5_000_000,
) -> np.ndarray:
    """Perpetual American value on the chain by plain value iteration.

    Solves v = max(f, (lam/(lam+r)) P v) to sup-norm ``tol``; requires
    r > 0 for the discounting contraction.
    """

    if r <= 0:
        raise ValueError("need a positive discount rate")
    return _fixed_point_stopping(
        chain, np.asarray(f, float), kill=r, tol=tol, max_iter=max_iter
    )


# ---------------------------------------------------------------------------
# exhaustive LCP reference
# ---------------------------------------------------------------------------


def lcp_by_enumeration(
    A: np.ndarray, psi: np.ndarray, tol: float = 1e-10
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve min(z, A z + psi) = 0 by trying every complementary basis.

    For each candidate support S, set z = 0 off S, solve A[S,S] z_S =
    -psi_S, and accept when z_S >= 0 and the slack w = A z + psi is
    nonnegative off S.  P-matrices admit exactly one solution; ties on
    degenerate data may surface several, in which case the first found is
    returned.  Exponential cost caps the size at 20 states.

    Returns (z, support_mask).
    """

    A = np.asarray(A, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n = len(psi)
    if n > 20:
        raise ValueError("enumeration oracle is limited to 20 states")
    for size in range(n + 1):
        for sub in combinations(range(n), size):
            S = list(sub)
            z = np.zeros(n)
            if S:
                try:
                    zS = np.linalg.solve(A[np.ix_(S, S)], -psi[S])
                except np.linalg.LinAlgError:
                    continue
                if np.min(zS, initial=0.0) < -tol:
                    continue
                z[S] = np.maximum(zS, 0.0)
            w = A @ z + psi
            mask = np.zeros(n, dtype=bool)
            mask[S] = True
            if np.min(w[~mask], initial=0.0) < -tol:
                continue
            if np.max(np.abs(w[mask]), initial=0.0) > 1e4 * tol * max(
                1.0, float(np.max(np.abs(psi)))
            ):
                continue
            return z, mask
    raise RuntimeError("no complementary basis found (matrix not a P-matrix?)")


# ---------------------------------------------------------------------------
# joint-lattice dynamic programming
# ---------------------------------------------------------------------------


def dp_parisian_lattice(
    gen: Union[GeneratorMatrix, np.ndarray],
    below: np.ndarray,
    payoff: np.ndarray,
    rate: float,
    dt: float,
    horizon: float,
    window: float,
    flavor: str,
    dtick: Optional[float] = None,
    vanilla_discounting: str = "activation",
    tol: float = 1e-11,
) -> np.ndarray:
    """Backward induction over the full joint lattice, one value per slot.

    ``flavor="down-out"`` runs the (duration level, spatial state) lattice
    with ``dtick`` clock resolution: per clock slice, the stopping fixed
    point is iterated to convergence on the whole lattice, the knocked-out
    level contributing zero.  Returned array has one row per slice and one
    column per live lattice slot (level 0 spans all states, deeper levels
    the below-barrier states), in same-slice price units.

    ``flavor="down-in"`` keeps the excursion clock continuous: the
    below-barrier block of the (spatial x clock-slice) joint chain is
    exponentiated over the window to get the exact activation and escape
    kernels, the vanilla leg comes from per-slice stopping fixed points,
    and one dense linear solve couples the entry values to the
    above-barrier values.  Returned array has one row per slice and one
    column per spatial state, discounted to time zero (matching the
    down-in pricer's surface convention).

    The grid is desk-scale only: lattice slots x slices must stay at or
    below 1e5.
    """

    R = gen.as_dense() if isinstance(gen, GeneratorMatrix) else np.asarray(gen, float)
    below = np.asarray(below, dtype=bool)
    payoff = np.asarray(payoff, dtype=float)
    J = int(math.floor(horizon / dt * (1.0 + 1e-12))) + 1
    n_slices = J + 1
    N = R.shape[0]
    if flavor == "down-out":
        if dtick is None:
            raise ValueError("down-out lattice needs a duration tick")
        return _downout_lattice(
            R, below, payoff, rate, dt, n_slices, window, dtick, tol
        )
    if flavor == "down-in":
        return _downin_renewal(
            R, below, payoff, rate, dt, n_slices, window, vanilla_discounting, tol
        )
    raise ValueError(f"unknown flavor {flavor!r}")


def _downout_lattice(R, below, payoff, rate, dt, n_slices, window, dtick, tol):
    N = R.shape[0]
    bi = np.flatnonzero(below)
    m = len(bi)
    n_ticks = int(math.floor(window / dtick * (1.0 + 1e-12))) + 1
    n_live = N + (n_ticks - 1) * m
    if n_live * n_slices > 100_000:
        raise ValueError("lattice too large for the DP oracle")

    # slot map: (level, state) -> flat index; knocked-out level not stored
    def slot(level, x):
        if level == 0:
            return x
        return N + (level - 1) * m + int(np.searchsorted(bi, x))

    L = np.zeros((n_live, n_live))
    tick = 1.0 / dtick
    for level in range(n_ticks):
        for x in range(N):
            if level > 0 and not below[x]:
                continue
            row = slot(level, x)
            # keep R's own diagonal so killing rows stay killed
            L[row, row] = R[x, x]
            for y in range(N):
                if y == x or R[x, y] == 0.0:
                    continue
                tgt_level = level if below[y] else 0
                L[row, slot(tgt_level, y)] += R[x, y]
            if below[x]:
                # the clock: one level up, value lost past the window
                if level + 1 < n_ticks:
                    L[row, slot(level + 1, x)] += tick
                L[row, row] -= tick

    f_lat = np.concatenate([payoff] + [payoff[bi]] * (n_ticks - 1))
    chain = UniformizedChain.from_generator(L)
    out = np.zeros((n_slices, n_live))
    for j in range(n_slices - 2, -1, -1):
        out[j] = _fixed_point_stopping(
            chain,
            f_lat,
            kill=rate,
            source_rate=1.0 / dt,
            source=out[j + 1],
            tol=tol,
            v0=out[j + 1],
        )
    return out


def _downin_renewal(R, below, payoff, rate, dt, n_slices, window, vanilla_discounting, tol):
    N = R.shape[0]
    J = n_slices - 1
    if N * n_slices > 100_000:
        raise ValueError("lattice too large for the DP oracle")
    times = np.arange(n_slices) * dt
    chain = UniformizedChain.from_generator(R)

    # vanilla leg in time-zero dollars, slice by slice
    W = np.zeros((n_slices, N))
    if vanilla_discounting == "activation":
        for j in range(J - 1, -1, -1):
            W[j] = _fixed_point_stopping(
                chain, payoff, kill=0.0, source_rate=1.0 / dt,
                source=W[j + 1], tol=tol, v0=W[j + 1],
            )
        W = np.exp(-rate * times)[:, None] * W
    elif vanilla_discounting == "exercise":
        for j in range(J - 1, -1, -1):
            W[j] = _fixed_point_stopping(
                chain, math.exp(-rate * times[j]) * payoff, kill=0.0,
                source_rate=1.0 / dt, source=W[j + 1], tol=tol, v0=W[j + 1],
            )
    else:
        raise ValueError(f"unknown vanilla discounting {vanilla_discounting!r}")

    bi = np.flatnonzero(below)
    ai = np.flatnonzero(~below)
    if len(bi) == 0:
        return np.zeros((n_slices, N))

    # joint (slice, state) generator over live slices 0..J-1; the shift out
    # of slice J-1 leaks to the worthless past-horizon slice
    Z = np.zeros((J, J))
    for j in range(J):
        Z[j, j] = -1.0 / dt
        if j + 1 < J:
            Z[j, j + 1] = 1.0 / dt
    G_joint = np.kron(np.eye(J), R) + np.kron(Z, np.eye(N))
    jb = (np.arange(J)[:, None] * N + bi[None, :]).ravel()
    ja = (np.arange(J)[:, None] * N + ai[None, :]).ravel()

    G_bb = G_joint[np.ix_(jb, jb)]
    G_ba = G_joint[np.ix_(jb, ja)]
    G_ab = G_joint[np.ix_(ja, jb)]
    G_aa = G_joint[np.ix_(ja, ja)]

    # exact excursion kernels over one window: survive below for the whole
    # window (activation) or escape above at some point inside it
    nb, na = len(jb), len(ja)
    Phi = expm(G_bb * window)
    block = np.zeros((nb + na, nb + na))
    block[:nb, :nb] = G_bb
    block[:nb, nb:] = G_ba
    Psi = expm(block * window)[:nb, nb:]

    w_act = Phi @ W[:J, bi].ravel()
    if na:
        X = np.linalg.solve(-G_aa, G_ab)          # above values from entries
        U = np.linalg.solve(np.eye(nb) - Psi @ X, w_act)
        V = X @ U
    else:
        U = w_act
        V = np.zeros(0)

    out = np.zeros((n_slices, N))
    out[:J, bi] = U.reshape(J, len(bi))
    if na:
        out[:J, ai] = V.reshape(J, len(ai))
    return out


# ---------------------------------------------------------------------------
# Monte-Carlo wrapper
# ---------------------------------------------------------------------------


def mc_transform_row(
    gen: Union[GeneratorMatrix, np.ndarray],
    x0: int,
    window: float,
    rate: float,
    n_paths: int,
    rng_seed: int,
    below: Optional[np.ndarray] = None,
    horizon: Optional[float] = None,
) -> ParisianSimResult:
    """One excursion-trigger kernel row estimated by path simulation."""

    return simulate_paths(
        gen, x0, window, rate, n_paths, rng_seed, below=below, horizon=horizon
    )
