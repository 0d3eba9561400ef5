"""Spatial grid and generator construction for the approximating chain.

The state space is a piecewise-uniform grid with the barrier placed exactly
on a node and the strike exactly midway between two adjacent nodes.  Each
state owns the half-open cell between the midpoints towards its neighbours
(unbounded at both ends).  Transition rates combine central (or upwind)
finite differences of the drift/diffusion with cell-integrated jump masses;
mass landing in a state's own cell is folded into the local second moment
and the jump-drift correction instead of a self-rate.  Spatial boundary
states are absorbing (identically zero rows).

Also provides exact event-by-event simulation of the chain together with the
barrier excursion clock, used as a Monte-Carlo oracle for the transform-based
pricers.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .models import ModelSpec
from .numerics import TriDiag

_CHUNK_ROWS = 512


class NegativeRateError(ValueError):
    """Raised when a rate construction produces negative off-diagonals."""


# ---------------------------------------------------------------------------
# spatial grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialGrid:
    """Ordered states with cell geometry and barrier/strike placement.

    ``states`` has n+1 entries y_0 < ... < y_n.  ``cell_edges`` has n+2
    entries: -inf, the n midpoints, +inf; state j owns
    [cell_edges[j], cell_edges[j+1]).  ``idx_l_plus`` indexes the barrier
    node (smallest state >= barrier; the barrier is on-grid), and
    ``idx_l_minus = idx_l_plus - 1`` the largest state below it.
    """

    states: np.ndarray
    barrier: float
    strike: float
    segment_counts: Tuple[int, int, int]

    def __post_init__(self):
        s = self.states
        if len(s) < 3 or np.any(np.diff(s) <= 0):
            raise ValueError("states must be strictly increasing, length >= 3")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def idx_l_plus(self) -> int:
        return int(np.searchsorted(self.states, self.barrier - 1e-12))

    @property
    def idx_l_minus(self) -> int:
        return self.idx_l_plus - 1

    @property
    def below_mask(self) -> np.ndarray:
        return self.states < self.barrier - 1e-12

    @property
    def cell_edges(self) -> np.ndarray:
        mids = 0.5 * (self.states[:-1] + self.states[1:])
        return np.concatenate([[-np.inf], mids, [np.inf]])

    @property
    def delta_plus(self) -> np.ndarray:
        d = np.diff(self.states)
        return np.concatenate([d, [d[-1]]])

    @property
    def delta_minus(self) -> np.ndarray:
        d = np.diff(self.states)
        return np.concatenate([[d[0]], d])

    @property
    def delta(self) -> np.ndarray:
        return 0.5 * (self.delta_plus + self.delta_minus)

    @property
    def mesh(self) -> float:
        return float(np.diff(self.states).max())

    def interp(self, values: np.ndarray, x: float) -> float:
        """Linear interpolation of per-state values at position x."""
        return float(np.interp(x, self.states, np.asarray(values, dtype=float)))


def _split_counts(n: int, lengths: Sequence[float]) -> Tuple[int, int, int]:
    """Proportional interval counts, remainder pushed to the middle segment."""

    total = sum(lengths)
    raw = [length / total * n for length in lengths]
    n1, n3 = max(1, round(raw[0])), max(1, round(raw[2]))
    n2 = n - n1 - n3
    while n2 < 1 and max(n1, n3) > 1:
        if n1 >= n3:
            n1 -= 1
        else:
            n3 -= 1
        n2 += 1
    return n1, n2, n3


def build_grid(
    y_min: float,
    y_max: float,
    barrier: float,
    strike: float,
    n: int,
    split: Union[str, Tuple[int, int, int]] = "proportional",
) -> SpatialGrid:
    """Piecewise-uniform grid of n intervals (n+1 states) on [y_min, y_max].

    Three uniform runs with the barrier shared as an exact node and the
    strike exactly midway between two adjacent nodes.  ``split`` is either
    "proportional" (interval counts proportional to segment lengths, the
    rounding remainder going to the middle segment), "sqrt" (proportional
    to square roots of the lengths, concentrating nodes near the
    barrier/strike band on wide domains), or an explicit (n1, n2, n3)
    triple with n1+n2+n3 = n.
    """

    lo, hi = min(barrier, strike), max(barrier, strike)
    if not (y_min < lo and hi < y_max):
        raise ValueError("need y_min < min(barrier, strike) <= max < y_max")
    if hi - lo <= 0:
        raise ValueError("barrier and strike must differ")
    if n < 8:
        raise ValueError("need at least 8 intervals")

    if split == "proportional":
        n1, n2, n3 = _split_counts(n, [lo - y_min, hi - lo, y_max - hi])
    elif split == "sqrt":
        n1, n2, n3 = _split_counts(
            n, [math.sqrt(lo - y_min), math.sqrt(hi - lo), math.sqrt(y_max - hi)]
        )
    else:
        n1, n2, n3 = split
    if n1 + n2 + n3 != n or min(n1, n2, n3) < 1:
        raise ValueError(
            f"infeasible segment counts ({n1}, {n2}, {n3}) for n={n}"
        )

    if strike > barrier:
        # middle run: barrier node up to strike - h2, then a double-width
        # cell so the strike sits exactly midway between strike -/+ h2
        h2 = (strike - barrier) / n2
        if strike + h2 >= y_max:
            raise ValueError("strike too close to y_max for requested split")
        left = np.linspace(y_min, barrier, n1 + 1)
        mid = barrier + h2 * np.arange(n2)           # barrier .. strike-h2
        right = np.linspace(strike + h2, y_max, n3 + 1)
        states = np.concatenate([left[:-1], mid, right])
    else:
        # mirrored: strike below the barrier
        h2 = (barrier - strike) / n2
        if strike - h2 <= y_min:
            raise ValueError("strike too close to y_min for requested split")
        left = np.linspace(y_min, strike - h2, n1 + 1)
        mid = strike + h2 + h2 * np.arange(n2)       # strike+h2 .. barrier
        right = np.linspace(barrier, y_max, n3 + 1)
        states = np.concatenate([left, mid, right[1:]])
    return SpatialGrid(
        states=states,
        barrier=float(barrier),
        strike=float(strike),
        segment_counts=(n1, n2, n3),
    )


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Uniform clock lattice: slices {0, dt, 2dt, ...} up to just past T.

    ``n_exercise`` is the index of the last slice <= T (exercise allowed
    there); ``t_plus`` is the first slice strictly beyond T, where a finite
    contract is worthless.
    """

    dt: float
    horizon: float

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < 0:
            raise ValueError("need dt > 0 and horizon >= 0")

    @property
    def n_exercise(self) -> int:
        return int(math.floor(self.horizon / self.dt * (1.0 + 1e-12)))

    @property
    def idx_t_plus(self) -> int:
        return self.n_exercise + 1

    @property
    def t_plus(self) -> float:
        return self.idx_t_plus * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.idx_t_plus + 1)


# ---------------------------------------------------------------------------
# generator assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorMatrix:
    """Spatial generator at one time slice.

    ``up``/``down`` hold nearest-neighbour rates (drift/diffusion plus the
    jump mass landing in the adjacent cells); ``jump`` holds rates to states
    two or more cells away (None for jump-free models); ``diag`` makes every
    interior row sum to zero.  Boundary rows are identically zero.
    """

    grid: SpatialGrid
    t: float
    up: np.ndarray
    down: np.ndarray
    diag: np.ndarray
    jump: Optional[np.ndarray]

    @property
    def dimension(self) -> int:
        return len(self.diag)

    @property
    def is_tridiagonal(self) -> bool:
        return self.jump is None

    def as_tridiag(self) -> TriDiag:
        if not self.is_tridiagonal:
            raise ValueError("generator has far jump rates")
        return TriDiag(self.down[1:], self.diag, self.up[:-1])

    def as_dense(self) -> np.ndarray:
        n = self.dimension
        out = np.zeros((n, n)) if self.jump is None else self.jump.copy()
        idx = np.arange(n - 1)
        out[idx, idx + 1] = self.up[:-1]
        out[idx + 1, idx] = self.down[1:]
        out[np.arange(n), np.arange(n)] = self.diag
        return out

    def norm_inf(self) -> float:
        return 2.0 * float(np.abs(self.diag).max())

    def row_sums(self) -> np.ndarray:
        n = self.dimension
        s = self.diag.copy()
        s[:-1] += self.up[:-1]
        s[1:] += self.down[1:]
        if self.jump is not None:
            s += self.jump.sum(axis=1)
        return s


def _clip_to_unit_ball(a: np.ndarray, b: np.ndarray):
    lo = np.maximum(a, -1.0)
    hi = np.minimum(b, 1.0)
    return lo, np.maximum(hi, lo)


def build_generator(
    model: ModelSpec,
    grid: SpatialGrid,
    t: float = 0.0,
    rate_policy: str = "error",
) -> GeneratorMatrix:
    """Assemble the chain generator for ``model`` on ``grid`` at time ``t``.

    Interior up/down rates follow the central construction

        up   = (mu - mu_bar) d-/(2 d+ d) + (s2 + s2_bar)/(2 d+ d) + neighbour mass
        down = -(mu - mu_bar) d+/(2 d- d) + (s2 + s2_bar)/(2 d- d) + neighbour mass

    where s2_bar is the jump second moment inside the state's own cell and
    mu_bar sums displacement times small-jump cell mass over other cells.
    ``rate_policy`` controls what happens when the central form turns an
    off-diagonal negative: "error" raises NegativeRateError, "clamp" zeroes
    the offenders (with a warning), and "upwind" switches the drift part of
    the affected states to one-sided differencing (nonnegative by
    construction, first-order accurate there).
    """

    if rate_policy not in ("error", "clamp", "upwind"):
        raise ValueError(f"unknown rate policy {rate_policy!r}")
    x = grid.states
    N = grid.n_states
    edges = grid.cell_edges
    dp, dm, dav = grid.delta_plus, grid.delta_minus, grid.delta

    mu = np.asarray(model.drift(t, x), dtype=float)
    s2 = np.asarray(model.diffusion_sq(t, x), dtype=float)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(s2))):
        raise ValueError("model coefficients must be finite on the grid")

    jump = None
    mu_bar = np.zeros(N)
    s2_bar = np.zeros(N)
    jm = model.jump_measure
    if jm is not None:
        jump = np.zeros((N, N))
        for i0 in range(1, N - 1, _CHUNK_ROWS):
            i1 = min(i0 + _CHUNK_ROWS, N - 1)
            rows = np.arange(i0, i1)
            xs = x[rows, None]
            a = edges[None, :-1] - xs
            b = edges[None, 1:] - xs
            mass = np.asarray(jm.interval_mass(t, xs, a, b), dtype=float)
            lo, hi = _clip_to_unit_ball(a, b)
            small = np.asarray(jm.interval_mass(t, xs, lo, hi), dtype=float)
            mass[rows - i0, rows] = 0.0
            small[rows - i0, rows] = 0.0
            jump[i0:i1] = mass
            mu_bar[i0:i1] = ((x[None, :] - xs) * small).sum(axis=1)
            s2_bar[i0:i1] = np.asarray(
                jm.small_jump_second_moment(
                    t, x[rows], edges[rows] - x[rows], edges[rows + 1] - x[rows]
                ),
                dtype=float,
            )

    drift_eff = mu - mu_bar
    diffusion = s2 + s2_bar
    up = np.zeros(N)
    down = np.zeros(N)
    interior = slice(1, N - 1)
    idx = np.arange(1, N - 1)

    central_up = (
        drift_eff[idx] * dm[idx] / (2.0 * dp[idx] * dav[idx])
        + diffusion[idx] / (2.0 * dp[idx] * dav[idx])
    )
    central_down = (
        -drift_eff[idx] * dp[idx] / (2.0 * dm[idx] * dav[idx])
        + diffusion[idx] / (2.0 * dm[idx] * dav[idx])
    )
    up[interior] = central_up
    down[interior] = central_down

    neg = np.minimum(up, 0.0) + np.minimum(down, 0.0)
    if np.any(neg < 0):
        worst = float(neg.min())
        if rate_policy == "error":
            raise NegativeRateError(
                f"central rate construction produced negative rates "
                f"(worst {worst:.4g} at state index {int(np.argmin(neg))}); "
                f"rerun with rate_policy='upwind' or 'clamp'"
            )
        if rate_policy == "clamp":
            warnings.warn(
                f"clamping negative rates (worst {worst:.4g})",
                RuntimeWarning,
                stacklevel=2,
            )
            np.maximum(up, 0.0, out=up)
            np.maximum(down, 0.0, out=down)
        else:  # upwind only where central failed, keeping second order elsewhere
            bad = np.zeros(N, dtype=bool)
            bad[interior] = (central_up < 0.0) | (central_down < 0.0)
            j = np.flatnonzero(bad)
            up[j] = (
                np.maximum(drift_eff[j], 0.0) / dp[j]
                + diffusion[j] / (2.0 * dp[j] * dav[j])
            )
            down[j] = (
                np.maximum(-drift_eff[j], 0.0) / dm[j]
                + diffusion[j] / (2.0 * dm[j] * dav[j])
            )

    if jump is not None:
        # neighbour jump mass rides on the tridiagonal rates
        up[idx] += jump[idx, idx + 1]
        down[idx] += jump[idx, idx - 1]
        jump[idx, idx + 1] = 0.0
        jump[idx, idx - 1] = 0.0
        jump[0, :] = 0.0
        jump[N - 1, :] = 0.0

    up[0] = down[0] = up[N - 1] = down[N - 1] = 0.0

    diag = -(up + down)
    if jump is not None:
        diag -= jump.sum(axis=1)
    diag[0] = diag[N - 1] = 0.0

    return GeneratorMatrix(
        grid=grid, t=t, up=up, down=down, diag=diag, jump=jump
    )


def generator_from_dense(
    grid: SpatialGrid, rates: np.ndarray, t: float = 0.0
) -> GeneratorMatrix:
    """Wrap an explicit rate matrix (testing hook for hand-built chains)."""

    R = np.asarray(rates, dtype=float)
    N = grid.n_states
    if R.shape != (N, N):
        raise ValueError(f"rate matrix must be {N}x{N}")
    idx = np.arange(N)
    up = np.zeros(N)
    down = np.zeros(N)
    up[:-1] = R[idx[:-1], idx[:-1] + 1]
    down[1:] = R[idx[1:], idx[1:] - 1]
    jump = R.copy()
    jump[idx[:-1], idx[:-1] + 1] = 0.0
    jump[idx[1:], idx[1:] - 1] = 0.0
    jump[idx, idx] = 0.0
    diag = R.diagonal().copy()
    if not np.any(jump):
        jump = None
    return GeneratorMatrix(grid=grid, t=t, up=up, down=down, diag=diag, jump=jump)


def resolve_rate_policy(flag: Optional[str], model: ModelSpec) -> str:
    """User flag wins; otherwise the model's hint; otherwise strict."""

    if flag:
        return flag
    if model.rate_policy_hint == "upwind":
        return "upwind"
    return "error"


def validate_generator(gen: GeneratorMatrix, rel_tol: float = 1e-12) -> None:
    """Raise if sign pattern, row sums or absorbing boundaries are violated."""

    N = gen.dimension
    if np.min(gen.up) < 0 or np.min(gen.down) < 0:
        raise ValueError("negative nearest-neighbour rate")
    if gen.jump is not None and gen.jump.min() < 0:
        raise ValueError("negative far jump rate")
    scale = max(1.0, float(np.abs(gen.diag).max()))
    sums = gen.row_sums()
    if np.max(np.abs(sums[1 : N - 1])) > rel_tol * scale:
        raise ValueError(
            f"interior row sums not zero (max {np.abs(sums[1:N-1]).max():.3e})"
        )
    boundary_mass = abs(gen.diag[0]) + abs(gen.diag[-1]) + gen.up[0] + gen.down[-1]
    if gen.jump is not None:
        boundary_mass += np.abs(gen.jump[0]).sum() + np.abs(gen.jump[-1]).sum()
    if boundary_mass != 0.0:
        raise ValueError("boundary rows must be identically zero (absorbing)")


def dump_generator_csv(gen: GeneratorMatrix, path) -> None:
    """Write nonzero entries as rows ``i,j,rate``."""

    dense = gen.as_dense()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "rate"])
        for i, j in zip(*np.nonzero(dense)):
            writer.writerow([int(i), int(j), repr(float(dense[i, j]))])


# ---------------------------------------------------------------------------
# exact path simulation (Monte-Carlo oracle)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainPath:
    """One simulated trajectory: state s_k holds on [times[k], times[k+1])."""

    times: np.ndarray     # event times, times[0] = 0
    states: np.ndarray    # states[k] = state entered at times[k]
    horizon: float

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("event times must be strictly increasing")
        if np.any(np.diff(self.states) == 0):
            raise ValueError("state must change at every event")

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.states[k])

    def first_passage(self, target_mask: np.ndarray) -> float:
        """First time the path enters any state flagged in target_mask."""
        hits = np.flatnonzero(target_mask[self.states])
        return float(self.times[hits[0]]) if hits.size else math.inf

    def excursion_trigger(self, below_mask: np.ndarray, window: float):
        """First time the running stay below the barrier reaches ``window``.

        Returns (trigger_time, state_at_trigger) or (inf, None); the clock
        resets whenever the path is at or above the barrier.
        """
        times = np.append(self.times, self.horizon)
        clock = 0.0
        for k, s in enumerate(self.states):
            seg = times[k + 1] - times[k]
            if below_mask[s]:
                if clock + seg >= window:
                    return float(times[k] + (window - clock)), int(s)
                clock += seg
            else:
                clock = 0.0
        return math.inf, None


def sample_path(
    rates: np.ndarray,
    x0: int,
    horizon: float,
    rng: np.random.Generator,
) -> ChainPath:
    """Simulate one exact trajectory of the chain with generator ``rates``."""

    times = [0.0]
    states = [int(x0)]
    t, s = 0.0, int(x0)
    n = rates.shape[0]
    while True:
        total = -rates[s, s]
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        probs = rates[s].copy()
        probs[s] = 0.0
        s = int(rng.choice(n, p=probs / total))
        times.append(t)
        states.append(s)
    return ChainPath(
        times=np.array(times), states=np.array(states), horizon=horizon
    )


@dataclass(frozen=True)
class ParisianSimResult:
    """Monte-Carlo estimate of E[e^{-r tau} 1{Y_tau = y}] per state y."""

    estimate: np.ndarray
    std_error: np.ndarray
    n_paths: int
    degenerate: bool
    mean_trigger_time: float

    @property
    def total(self) -> float:
        return float(self.estimate.sum())


def simulate_paths(
    gen: Union[GeneratorMatrix, np.ndarray],
    x0: int,
    window: float,
    rate: float,
    n_paths: int,
    rng_seed: int,
    below: Optional[np.ndarray] = None,
    horizon: Optional[float] = None,
    batch_size: int = 100_000,
) -> ParisianSimResult:
    """Estimate the discounted excursion-trigger kernel by simulation.

    Tracks each path's state and its running below-barrier clock between
    exact exponential events; a path triggers when the clock reaches
    ``window`` and contributes e^{-rate * trigger_time} to the entry of the
    state it occupies at that instant.  Paths that exceed ``horizon``
    (default: long enough that the neglected discount tail is < 1e-12)
    contribute zero.  Absorbing below-barrier states trigger after the
    remaining window deterministically; starting in an absorbing state at or
    above the barrier is degenerate (flagged, never triggers).
    """

    if isinstance(gen, GeneratorMatrix):
        R = gen.as_dense()
        if below is None:
            below = gen.grid.below_mask
    else:
        R = np.asarray(gen, dtype=float)
    if below is None:
        raise ValueError("need a below-barrier mask for plain matrices")
    below = np.asarray(below, dtype=bool)
    N = R.shape[0]
    if window < 0 or rate < 0:
        raise ValueError("window and rate must be nonnegative")
    if horizon is None:
        horizon = 30.0 * window + (40.0 / rate if rate > 0 else 1e4)

    exit_rates = -R.diagonal()
    probs = np.where(exit_rates[:, None] > 0, R / np.where(exit_rates == 0, 1, exit_rates)[:, None], 0.0)
    np.fill_diagonal(probs, 0.0)
    cum = np.cumsum(probs, axis=1)

    degenerate = exit_rates[x0] <= 0 and not below[x0]
    rng = np.random.default_rng(rng_seed)
    disc_sum = np.zeros(N)
    disc_sq = np.zeros(N)
    tau_sum, tau_count = 0.0, 0

    done = 0
    while done < n_paths:
        m = min(batch_size, n_paths - done)
        done += m
        state = np.full(m, x0, dtype=np.int64)
        t = np.zeros(m)
        clock = np.zeros(m)
        alive = np.ones(m, dtype=bool)
        while np.any(alive):
            s = state[alive]
            rates_a = exit_rates[s]
            is_below = below[s]
            # absorbing states: either trigger after the residual window
            # (below) or never (at/above the barrier)
            absorbed = rates_a <= 0
            if np.any(absorbed):
                ai = np.flatnonzero(alive)[absorbed]
                trig = below[state[ai]]
                ti = ai[trig]
                tau = t[ti] + (window - clock[ti])
                w = np.exp(-rate * tau)
                np.add.at(disc_sum, state[ti], w)
                np.add.at(disc_sq, state[ti], w * w)
                tau_sum += tau.sum()
                tau_count += len(ti)
                alive[ai] = False
                continue
            hold = rng.exponential(1.0, size=len(s)) / rates_a
            # below-barrier paths whose clock fills the window mid-holding
            fill = np.where(is_below, window - clock[alive], np.inf)
            trigger = hold >= fill
            ai = np.flatnonzero(alive)
            ti = ai[trigger]
            if len(ti):
                tau = t[ti] + fill[trigger]
                w = np.exp(-rate * tau)
                np.add.at(disc_sum, state[ti], w)
                np.add.at(disc_sq, state[ti], w * w)
                tau_sum += tau.sum()
                tau_count += len(ti)
                alive[ti] = False
            mi = ai[~trigger]
            if not len(mi):
                continue
            holds = hold[~trigger]
            t[mi] += holds
            was_below = below[state[mi]]
            u = rng.random(len(mi))
            rowcum = cum[state[mi]]
            new_state = (u[:, None] <= rowcum).argmax(axis=1)
            state[mi] = new_state
            now_below = below[new_state]
            clock[mi] = np.where(
                now_below & was_below, clock[mi] + holds, 0.0
            )
            timed_out = t[mi] > horizon
            if np.any(timed_out):
                alive[mi[timed_out]] = False

    est = disc_sum / n_paths
    var = disc_sq / n_paths - est**2
    se = np.sqrt(np.maximum(var, 0.0) / n_paths)
    return ParisianSimResult(
        estimate=est,
        std_error=se,
        n_paths=n_paths,
        degenerate=degenerate,
        mean_trigger_time=tau_sum / tau_count if tau_count else math.inf,
    )
