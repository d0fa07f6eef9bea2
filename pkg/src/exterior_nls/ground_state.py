"""Radial ground states of ``-Q + Delta Q + Q**p = 0`` and the constants built on them.

The profile is found by shooting on ``Q(0)``: too small a value makes the
trajectory turn back up before reaching zero, too large a value makes it
cross zero.  Plain double-precision shooting can only follow the decaying
branch down to roughly the square root of the final bracket width, so past
the point where the two bracketing trajectories separate the profile is
continued by the decaying solution of the linearised equation,
``A * r**(-nu) * K_nu(r)`` with ``nu = (d - 2) / 2``.  The neglected term
``Q**p`` is below ``1e-10 * Q`` there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.special import gamma as gamma_fn
from scipy.special import kve

from .errors import ConsistencyError, InvalidInputError, SolverFailure

logger = logging.getLogger(__name__)

__all__ = [
    "GroundStateProfile",
    "solve_ground_state",
    "gn_constant",
    "threshold_quantities",
    "critical_regularity",
    "sphere_area",
]

_SERIES_RADIUS = 1e-3
_DR = 1.0 / 512
_R_LIMIT = 120.0


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / gamma_fn(d / 2)


def critical_regularity(d: int, p: float) -> float:
    return d / 2 - 2 / (p - 1)


@dataclass(frozen=True)
class GroundStateProfile:
    """Sampled ground state with its norms.

    ``r_samples`` is uniform from 0 to ``r_max``.  ``mass``, ``grad_sq`` and
    ``lp1`` are the squared L2 norm, the squared L2 norm of the gradient and
    ``int Q**(p+1)`` over R^d.
    """

    d: int
    p: float
    r_samples: np.ndarray = field(repr=False)
    q_samples: np.ndarray = field(repr=False)
    dq_samples: np.ndarray = field(repr=False)
    q0: float
    r_max: float
    mass: float
    grad_sq: float
    lp1: float
    energy: float
    c_gn: float
    tol: float
    tail_start: float
    tail_amplitude: float

    @property
    def norms(self) -> dict:
        return {"mass": self.mass, "grad_sq": self.grad_sq, "lp1": self.lp1}

    def __call__(self, r) -> np.ndarray:
        """Q at arbitrary radii (zero beyond ``r_max``)."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.zeros_like(r)
        inside = r <= self.r_max
        out[inside] = self._spline(r[inside])
        return out

    @property
    def _spline(self):
        spl = self.__dict__.get("_spline_cache")
        if spl is None:
            spl = CubicHermiteSpline(self.r_samples, self.q_samples, self.dq_samples)
            object.__setattr__(self, "_spline_cache", spl)
        return spl

    def identity_residuals(self) -> dict:
        """Relative residuals of the three scaling identities for Q."""
        d, p = self.d, self.p
        grad_ratio = d * (p - 1) / ((d + 2) - p * (d - 2))
        lp1_ratio = 2 * (p + 1) / (d * (p - 1))
        energy_ratio = (d * (p - 1) - 4) / (2 * d * (p - 1))
        scale = self.grad_sq
        return {
            "grad_vs_mass": abs(self.grad_sq - grad_ratio * self.mass) / scale,
            "lp1_vs_grad": abs(self.lp1 - lp1_ratio * self.grad_sq) / scale,
            "energy_vs_grad": abs(self.energy - energy_ratio * self.grad_sq) / scale,
        }

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "p": self.p,
            "q0": self.q0,
            "r_max": self.r_max,
            "mass": self.mass,
            "grad_sq": self.grad_sq,
            "lp1": self.lp1,
            "energy": self.energy,
            "c_gn": self.c_gn,
            "identity_residuals": self.identity_residuals(),
        }


def _rhs(d, p):
    def f(r, y):
        q, dq = y
        return [dq, -(d - 1) / r * dq + q - np.abs(q) ** (p - 1) * q]

    return f


def _series(q0, d, p, r):
    """Taylor start ``q0 + b r^2 + c r^4`` of the regular solution."""
    b = (q0 - q0**p) / (2 * d)
    c = b * (1 - p * q0 ** (p - 1)) / (4 * (d + 2))
    return q0 + b * r**2 + c * r**4, 2 * b * r + 4 * c * r**3


def _shoot(q0, d, p, dense=False):
    """Integrate from the series start; classify as 'cross' or 'turn'."""
    if q0 <= 1.0:
        return "turn", None
    q, dq = _series(q0, d, p, _SERIES_RADIUS)

    def crosses(r, y):
        return y[0]

    crosses.terminal = True
    crosses.direction = -1

    def turns(r, y):
        return y[1]

    turns.terminal = True
    turns.direction = 1

    sol = solve_ivp(
        _rhs(d, p),
        (_SERIES_RADIUS, _R_LIMIT),
        [q, dq],
        method="DOP853",
        rtol=1e-13,
        atol=1e-300,
        events=(crosses, turns),
        dense_output=dense,
    )
    if sol.t_events[0].size:
        return "cross", sol
    if sol.t_events[1].size:
        return "turn", sol
    # Nothing happened before _R_LIMIT: decide by the final slope.
    return ("turn" if sol.y[0, -1] > 0 else "cross"), sol


def _bracket(d, p):
    lo, hi = 1.0, 2.0
    for _ in range(60):
        if _shoot(hi, d, p)[0] == "cross":
            return lo, hi
        lo, hi = hi, 2 * hi
    raise SolverFailure(f"no shooting bracket found for d={d}, p={p} (last q0={hi})")


def solve_ground_state(d: int, p: float, tol: float = 1e-14) -> GroundStateProfile:
    """Positive radial ground state in R^d for the power nonlinearity ``p``.

    ``tol`` is the relative width at which bisection on ``Q(0)`` stops.
    """
    if d not in (1, 2, 3):
        raise InvalidInputError(f"dimension must be 1, 2 or 3, got {d}")
    if not p > 1:
        raise InvalidInputError(f"exponent must exceed 1, got {p}")
    if d >= 3 and not p < (d + 2) / (d - 2):
        raise InvalidInputError(f"p={p} is not energy-subcritical in d={d}")
    if not tol > 0:
        raise InvalidInputError("tol must be positive")

    lo, hi = _bracket(d, p)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _shoot(mid, d, p)[0] == "cross":
            hi = mid
        else:
            lo = mid
    logger.debug("d=%d p=%g: Q(0) in [%r, %r]", d, p, lo, hi)

    _, sol_lo = _shoot(lo, d, p, dense=True)
    _, sol_hi = _shoot(hi, d, p, dense=True)
    r_end = min(sol_lo.t[-1], sol_hi.t[-1])
    n = int(r_end / _DR)
    r = _DR * np.arange(n + 1)
    inner = r[r > _SERIES_RADIUS]
    y_lo = sol_lo.sol(inner)
    y_hi = sol_hi.sol(inner)
    q_in = 0.5 * (y_lo[0] + y_hi[0])
    dq_in = 0.5 * (y_lo[1] + y_hi[1])

    # The bracket trajectories agree until the growing mode takes over; stop
    # trusting them once they differ by 1e-3 relative or Q becomes small.
    spread = np.abs(y_hi[0] - y_lo[0])
    bad = (spread > 1e-3 * np.abs(q_in)) | (q_in < 1e-9 * lo) | (dq_in >= 0)
    if not bad.any():
        raise SolverFailure("shooting trajectories never separated; raise the integration limit")
    stop = int(np.argmax(bad)) - 1
    if stop < 4:
        raise SolverFailure("ground-state trajectory is unusable: bracket too wide")
    r_m = inner[stop]
    q_m = q_in[stop]

    nu = (d - 2) / 2

    def tail_shape(x):
        return x ** (-nu) * kve(nu, x) * np.exp(-x)

    amp = q_m / tail_shape(r_m)
    # Extend until Q is negligible.
    r_max = r_m
    while amp * tail_shape(r_max) > 1e-13 * lo:
        r_max += 1.0
    n_total = int(math.ceil(r_max / _DR))
    if n_total % 2:
        n_total += 1
    r = _DR * np.arange(n_total + 1)
    q = np.empty_like(r)
    dq = np.empty_like(r)
    q0 = 0.5 * (lo + hi)
    head = r <= _SERIES_RADIUS
    q[head], dq[head] = _series(q0, d, p, r[head])
    mid_mask = (r > _SERIES_RADIUS) & (r <= r_m)
    ym = 0.5 * (sol_lo.sol(r[mid_mask]) + sol_hi.sol(r[mid_mask]))
    q[mid_mask], dq[mid_mask] = ym[0], ym[1]
    tail = r > r_m
    rt = r[tail]
    q[tail] = amp * tail_shape(rt)
    # d/dr [r^-nu K_nu(r)] = -r^-nu K_{nu+1}(r)
    dq[tail] = -amp * rt ** (-nu) * kve(nu + 1, rt) * np.exp(-rt)

    area = sphere_area(d)
    w = r ** (d - 1) if d > 1 else np.ones_like(r)
    mass = area * simpson(w * q**2, x=r)
    grad_sq = area * simpson(w * dq**2, x=r)
    lp1 = area * simpson(w * np.abs(q) ** (p + 1), x=r)
    energy = 0.5 * grad_sq - lp1 / (p + 1)

    profile = GroundStateProfile(
        d=d,
        p=float(p),
        r_samples=r,
        q_samples=q,
        dq_samples=dq,
        q0=float(q0),
        r_max=float(r[-1]),
        mass=float(mass),
        grad_sq=float(grad_sq),
        lp1=float(lp1),
        energy=float(energy),
        c_gn=float("nan"),
        tol=float(tol),
        tail_start=float(r_m),
        tail_amplitude=float(amp),
    )
    object.__setattr__(profile, "c_gn", gn_constant(profile))
    return profile


def gn_constant(profile: GroundStateProfile, rtol: float = 1e-6) -> float:
    """Sharp Gagliardo-Nirenberg constant from the ground state.

    The direct quotient of norms is checked against the closed form that only
    uses the gradient and mass of Q; a mismatch means the profile is bad.
    """
    d, p = profile.d, profile.p
    grad_norm = math.sqrt(profile.grad_sq)
    l2_norm = math.sqrt(profile.mass)
    mass_exp = 2 - (d - 2) * (p - 1) / 2
    direct = profile.lp1 / (grad_norm ** (d * (p - 1) / 2) * l2_norm**mass_exp)
    k = 2 * (p + 1) / (d * (p - 1))
    a = d * (p - 1) - 4
    closed = k * grad_norm ** (-a / 2) * l2_norm ** (-(4 - (d - 2) * (p - 1)) / 2)
    if not abs(direct - closed) <= rtol * abs(closed):
        raise ConsistencyError(f"GN constant mismatch: {direct!r} vs {closed!r}")
    return direct


def threshold_quantities(profile: GroundStateProfile) -> dict:
    """Critical regularity and the two ground-state threshold products.

    ``ME_Q = M[Q]**((1 - s_c) / s_c) * E[Q]`` and
    ``GN_Q = ||Q||**(1 - s_c) * ||grad Q||**s_c``.
    """
    s = critical_regularity(profile.d, profile.p)
    if not s > 0:
        raise InvalidInputError(f"s_c = {s} <= 0: the threshold criterion needs an intercritical exponent")
    if profile.d >= 3 and not s < 1:
        raise InvalidInputError(f"s_c = {s} >= 1 is energy-supercritical")
    me = profile.mass ** ((1 - s) / s) * profile.energy
    gn = math.sqrt(profile.mass) ** (1 - s) * math.sqrt(profile.grad_sq) ** s
    return {"s_c": s, "ME_Q": me, "GN_Q": gn}
