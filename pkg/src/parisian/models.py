"""Model coefficient bundles: drift, squared diffusion and jump measure.

A model is described in a fixed coordinate (raw price or log price) by its
infinitesimal drift ``mu(t, x)``, squared diffusion ``sigma_sq(t, x)`` and an
optional jump measure.  The drift is stated in the truncated-compensator form:
the jump part of the generator is understood as

    integral of  g(x+z) - g(x) - z g'(x) 1{|z| <= 1}  against nu(t, x, dz)

so constructors for models given as plain SDEs fold the truncated first moment
of the jump measure into the drift.  The chain builder relies on this
convention when it converts drift and cell-integrated jump masses into rates.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import exp1


class Coordinate(enum.Enum):
    """Coordinate the state variable lives in."""

    PRICE = "price"
    LOG = "log"


@dataclass(frozen=True)
class JumpMeasure:
    """Cell-integrated view of a jump measure.

    All three callables take ``(t, x, a, b)`` with ``a < b`` (arrays allowed,
    broadcast elementwise; ``+-inf`` endpoints are fine) and integrate over the
    half-open interval ``[a, b)``:

    * ``interval_mass``             integral of nu(t, x, dz)
    * ``small_jump_second_moment``  integral of z^2 nu(t, x, dz)
    * ``truncated_first_moment``    integral of z 1{|z| <= 1} nu(t, x, dz)

    ``total_activity`` is the mass of the whole real line (may be ``inf``).
    """

    interval_mass: Callable[..., np.ndarray]
    small_jump_second_moment: Callable[..., np.ndarray]
    truncated_first_moment: Callable[..., np.ndarray]
    total_activity: float

    def state_independent(self) -> bool:
        return bool(getattr(self, "_state_independent", False))


def _with_flag(jm: JumpMeasure, state_independent: bool) -> JumpMeasure:
    object.__setattr__(jm, "_state_independent", state_independent)
    return jm


@dataclass(frozen=True)
class ModelSpec:
    """Markov model in one spatial dimension.

    ``drift`` and ``diffusion_sq`` are vectorized over the state argument.
    ``rate_policy_hint`` names the nearest-neighbour rate construction the
    model needs ("central" where the diffusion dominates; pure-jump models ask
    for "upwind" because central drift differencing turns rates negative).
    """

    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion_sq: Callable[[float, np.ndarray], np.ndarray]
    jump_measure: Optional[JumpMeasure]
    coordinate: Coordinate
    time_homogeneous: bool = True
    name: str = "custom"
    rate_policy_hint: str = "central"

    def state_of_price(self, s):
        if self.coordinate is Coordinate.LOG:
            return np.log(s)
        return np.asarray(s, dtype=float)

    def price_of_state(self, x):
        if self.coordinate is Coordinate.LOG:
            return np.exp(x)
        return np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# parameter bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KouParams:
    """Double-exponential jump diffusion parameters (log-price jumps)."""

    sigma: float
    lam: float
    eta_plus: float
    eta_minus: float
    p_plus: float
    p_minus: float
    r_f: float
    dividend: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0 or self.lam < 0:
            raise ValueError("sigma must be positive and lam nonnegative")
        if self.eta_plus <= 1.0:
            raise ValueError("eta_plus must exceed 1 for a finite price mean")
        if self.eta_minus <= 0:
            raise ValueError("eta_minus must be positive")
        if abs(self.p_plus + self.p_minus - 1.0) > 1e-12:
            raise ValueError("p_plus + p_minus must equal 1")
        if self.p_plus < 0 or self.p_minus < 0:
            raise ValueError("jump direction probabilities must be nonnegative")


@dataclass(frozen=True)
class VGParams:
    """Variance gamma parameters."""

    sigma: float
    nu: float
    theta: float
    r_f: float
    dividend: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0 or self.nu <= 0:
            raise ValueError("sigma and nu must be positive")
        if 1.0 - self.theta * self.nu - 0.5 * self.sigma**2 * self.nu <= 0:
            raise ValueError(
                "martingale correction undefined: need "
                "1 - theta*nu - sigma^2*nu/2 > 0"
            )


# ---------------------------------------------------------------------------
# Black-Scholes
# ---------------------------------------------------------------------------


def bs_model(r_f: float, dividend: float, sigma: float) -> ModelSpec:
    """Geometric Brownian motion in raw price coordinates."""

    if sigma <= 0:
        raise ValueError("sigma must be positive")

    def drift(t, x):
        return (r_f - dividend) * np.asarray(x, dtype=float)

    def diffusion_sq(t, x):
        return (sigma * np.asarray(x, dtype=float)) ** 2

    return ModelSpec(
        drift=drift,
        diffusion_sq=diffusion_sq,
        jump_measure=None,
        coordinate=Coordinate.PRICE,
        time_homogeneous=True,
        name="bs",
    )


# ---------------------------------------------------------------------------
# Kou double-exponential jump diffusion (log coordinates)
# ---------------------------------------------------------------------------


def kou_jump_measure(params: KouParams) -> JumpMeasure:
    """Closed-form cell integrals of the double-exponential jump density.

    Density: lam * (p+ eta+ e^{-eta+ z} 1{z>=0} + p- eta- e^{eta- z} 1{z<0}).
    """

    lam, ep, em = params.lam, params.eta_plus, params.eta_minus
    wp, wm = lam * params.p_plus, lam * params.p_minus

    def _pos_mass(a, b):
        # integral of eta+ e^{-eta+ z} over [a,b), 0 <= a <= b
        return np.exp(-ep * a) - np.exp(-ep * b)

    def _neg_mass(a, b):
        # integral of eta- e^{eta- z} over [a,b), a <= b <= 0
        return np.exp(em * b) - np.exp(em * a)

    def _pos_first(a, b):
        # integral of z eta e^{-eta z}; antiderivative of the tail is (z+1/eta)e^{-eta z}
        def tail(x):
            out = (x + 1.0 / ep) * np.exp(-ep * x)
            return np.where(np.isinf(x), 0.0, out)

        return tail(a) - tail(b)

    def _neg_first(a, b):
        def tail(x):  # integral over [x, inf) of u eta e^{-eta u}, x = |z|
            out = (x + 1.0 / em) * np.exp(-em * x)
            return np.where(np.isinf(x), 0.0, out)

        return -(tail(-b) - tail(-a))

    def _pos_second(a, b):
        def tail(x):
            out = (x * x + 2.0 * x / ep + 2.0 / ep**2) * np.exp(-ep * x)
            return np.where(np.isinf(x), 0.0, out)

        return tail(a) - tail(b)

    def _neg_second(a, b):
        def tail(x):
            out = (x * x + 2.0 * x / em + 2.0 / em**2) * np.exp(-em * x)
            return np.where(np.isinf(x), 0.0, out)

        return tail(-b) - tail(-a)

    def _split(a, b, fpos, fneg):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        ap, bp = np.maximum(a, 0.0), np.maximum(b, 0.0)
        an, bn = np.minimum(a, 0.0), np.minimum(b, 0.0)
        return wp * fpos(ap, bp) + wm * fneg(an, bn)

    def interval_mass(t, x, a, b):
        return _split(a, b, _pos_mass, _neg_mass)

    def second_moment(t, x, a, b):
        return _split(a, b, _pos_second, _neg_second)

    def truncated_first(t, x, a, b):
        a = np.maximum(np.asarray(a, dtype=float), -1.0)
        b = np.minimum(np.asarray(b, dtype=float), 1.0)
        a = np.minimum(a, b)  # empty intersection -> zero-length interval
        return _split(a, b, _pos_first, _neg_first)

    jm = JumpMeasure(
        interval_mass=interval_mass,
        small_jump_second_moment=second_moment,
        truncated_first_moment=truncated_first,
        total_activity=lam,
    )
    return _with_flag(jm, True)


def kou_model(params: KouParams) -> ModelSpec:
    """Kou jump diffusion in log-price coordinates."""

    p = params
    zeta = (
        p.p_plus * p.eta_plus / (p.eta_plus - 1.0)
        + p.p_minus * p.eta_minus / (p.eta_minus + 1.0)
        - 1.0
    )
    jm = kou_jump_measure(p)
    # stated SDE drift, plus the truncated first moment so that the drift is
    # in the same compensator convention as the generator assembly
    base = p.r_f - p.dividend - p.lam * zeta - 0.5 * p.sigma**2
    mu = base + float(jm.truncated_first_moment(0.0, 0.0, -np.inf, np.inf))

    def drift(t, x):
        return np.full_like(np.asarray(x, dtype=float), mu)

    def diffusion_sq(t, x):
        return np.full_like(np.asarray(x, dtype=float), p.sigma**2)

    return ModelSpec(
        drift=drift,
        diffusion_sq=diffusion_sq,
        jump_measure=jm,
        coordinate=Coordinate.LOG,
        time_homogeneous=True,
        name="kou",
    )


# ---------------------------------------------------------------------------
# Variance gamma (log coordinates, pure jump)
# ---------------------------------------------------------------------------


def vg_jump_measure(params: VGParams) -> JumpMeasure:
    """Cell integrals of the variance-gamma density via exponential integrals.

    The density is C e^{-lam_p z}/z for z > 0 and C e^{-lam_m |z|}/|z| for
    z < 0 with C = 1/nu; masses need E1, first and second moments are
    elementary.  A quadrature of the same density is kept in the test-suite as
    an independent check.
    """

    s2 = params.sigma**2
    C = 1.0 / params.nu
    root = math.sqrt(params.theta**2 + 2.0 * s2 / params.nu) / s2
    lam_p = root - params.theta / s2
    lam_m = root + params.theta / s2

    def _mass_side(lam, a, b):
        # integral of e^{-lam z}/z over [a,b), 0 <= a <= b; E1(0) = inf is the
        # correct (infinite-activity) answer for cells touching the origin
        with np.errstate(divide="ignore", invalid="ignore"):
            val = exp1(lam * a) - exp1(lam * b)
        return np.where(a >= b, 0.0, val)

    def _first_side(lam, a, b):
        return (np.exp(-lam * a) - np.exp(-lam * b)) / lam

    def _second_side(lam, a, b):
        def tail(x):
            out = (1.0 + lam * x) * np.exp(-lam * x) / lam**2
            return np.where(np.isinf(x), 0.0, out)

        return tail(a) - tail(b)

    def _split(a, b, side):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        ap, bp = np.maximum(a, 0.0), np.maximum(b, 0.0)
        an, bn = -np.minimum(b, 0.0), -np.minimum(a, 0.0)  # mirrored onto z>0
        return C * (side(lam_p, ap, bp) + side(lam_m, an, bn))

    def interval_mass(t, x, a, b):
        return _split(a, b, _mass_side)

    def second_moment(t, x, a, b):
        return _split(a, b, _second_side)

    def truncated_first(t, x, a, b):
        a = np.maximum(np.asarray(a, dtype=float), -1.0)
        b = np.minimum(np.asarray(b, dtype=float), 1.0)
        a = np.minimum(a, b)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        ap, bp = np.maximum(a, 0.0), np.maximum(b, 0.0)
        an, bn = -np.minimum(b, 0.0), -np.minimum(a, 0.0)
        pos = _first_side(lam_p, ap, bp)
        neg = -_first_side(lam_m, an, bn)
        return C * (pos + neg)

    jm = JumpMeasure(
        interval_mass=interval_mass,
        small_jump_second_moment=second_moment,
        truncated_first_moment=truncated_first,
        total_activity=math.inf,
    )
    return _with_flag(jm, True)


def vg_model(params: VGParams) -> ModelSpec:
    """Variance gamma in log-price coordinates (no diffusion part)."""

    p = params
    omega = math.log(1.0 - p.theta * p.nu - 0.5 * p.sigma**2 * p.nu) / p.nu
    jm = vg_jump_measure(p)
    mu = (
        p.r_f
        - p.dividend
        + omega
        + float(jm.truncated_first_moment(0.0, 0.0, -np.inf, np.inf))
    )

    def drift(t, x):
        return np.full_like(np.asarray(x, dtype=float), mu)

    def diffusion_sq(t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return ModelSpec(
        drift=drift,
        diffusion_sq=diffusion_sq,
        jump_measure=jm,
        coordinate=Coordinate.LOG,
        time_homogeneous=True,
        name="vg",
        rate_policy_hint="upwind",
    )


# ---------------------------------------------------------------------------
# generic density-based measure (adaptive quadrature, split at the origin)
# ---------------------------------------------------------------------------


def jump_measure_from_density(
    density: Callable[[float], float],
    total_activity: float = math.nan,
    abs_tol: float = 1e-12,
    rel_tol: float = 1e-10,
) -> JumpMeasure:
    """Build a JumpMeasure from a scalar Levy density by adaptive quadrature.

    Integrals are split at the origin.  Intended for user-supplied models and
    as an independent cross-check of the closed forms; cell-by-cell quadrature
    is too slow for large production grids.
    """

    def _quad(f, a, b):
        if a >= b:
            return 0.0
        pieces = []
        if a < 0.0 < b:
            pieces = [(a, 0.0), (0.0, b)]
        else:
            pieces = [(a, b)]
        out = 0.0
        for lo, hi in pieces:
            val, _ = integrate.quad(
                f, lo, hi, epsabs=abs_tol, epsrel=rel_tol, limit=200
            )
            out += val
        return out

    def _vectorize(f):
        def call(t, x, a, b):
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            shape = np.broadcast_shapes(a.shape, b.shape)
            a = np.broadcast_to(a, shape).ravel()
            b = np.broadcast_to(b, shape).ravel()
            out = np.array([_quad(f, lo, hi) for lo, hi in zip(a, b)])
            return out.reshape(shape) if shape else float(out[0])

        return call

    mass = _vectorize(density)
    second = _vectorize(lambda z: z * z * density(z))

    def trunc_first(t, x, a, b):
        a = np.maximum(np.asarray(a, dtype=float), -1.0)
        b = np.minimum(np.asarray(b, dtype=float), 1.0)
        a = np.minimum(a, b)
        return _vectorize(lambda z: z * density(z))(t, x, a, b)

    jm = JumpMeasure(
        interval_mass=mass,
        small_jump_second_moment=second,
        truncated_first_moment=trunc_first,
        total_activity=total_activity,
    )
    return _with_flag(jm, True)


# ---------------------------------------------------------------------------
# parameter files and model dispatch
# ---------------------------------------------------------------------------

_ALIASES = {
    "lambda": "lam",
    "eta+": "eta_plus",
    "eta-": "eta_minus",
    "p+": "p_plus",
    "p-": "p_minus",
    "q": "dividend",
    "div": "dividend",
    "r": "r_f",
}


def parse_param_text(text: str) -> dict:
    """Parse either a JSON object or flat ``name = value`` lines."""

    stripped = text.strip()
    if stripped.startswith("{"):
        raw = json.loads(stripped)
    else:
        raw = {}
        for line in stripped.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"cannot parse parameter line: {line!r}")
            key, val = line.split("=", 1)
            raw[key.strip()] = float(val.strip())
    return {_ALIASES.get(k, k): float(v) for k, v in raw.items()}


def load_param_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_param_text(fh.read())


def build_model(name: str, params: dict) -> ModelSpec:
    """Construct a built-in model from a flat parameter dict."""

    name = name.lower()
    if name == "bs":
        return bs_model(
            r_f=params["r_f"],
            dividend=params.get("dividend", 0.0),
            sigma=params["sigma"],
        )
    if name == "kou":
        return kou_model(
            KouParams(
                sigma=params["sigma"],
                lam=params["lam"],
                eta_plus=params["eta_plus"],
                eta_minus=params["eta_minus"],
                p_plus=params["p_plus"],
                p_minus=params["p_minus"],
                r_f=params["r_f"],
                dividend=params.get("dividend", 0.0),
            )
        )
    if name == "vg":
        return vg_model(
            VGParams(
                sigma=params["sigma"],
                nu=params["nu"],
                theta=params["theta"],
                r_f=params["r_f"],
                dividend=params.get("dividend", 0.0),
            )
        )
    raise ValueError(f"unknown model {name!r}; expected bs, kou or vg")
