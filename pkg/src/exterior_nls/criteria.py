"""Hypothesis checks for the finite-time blow-up results, and threshold margins.

Each ``check_*`` function evaluates the hypotheses of one blow-up criterion on
initial data and returns a :class:`CriterionReport`; the verdict is the AND of
the individual flags.  Nothing here proves blow-up: a satisfied report only
says the data sit in the regime where blow-up is guaranteed, and a simulation
shows what the discrete flow does.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import field as fld
from .errors import InvalidInputError, SymmetryError
from .field import ComplexField, SymmetryClass
from .geometry import ObstacleSpec
from .ground_state import GroundStateProfile, critical_regularity
from .virial import upsilon2

logger = logging.getLogger(__name__)

__all__ = [
    "THM_BALL",
    "THM_CONVEX",
    "THM_SYM",
    "THM_THRESHOLD",
    "CONJECTURAL",
    "Hypothesis",
    "CriterionReport",
    "scaling_threshold",
    "check_thm_ball",
    "check_thm_convex",
    "check_thm_sym",
    "check_threshold",
    "threshold_function",
    "threshold_trace",
    "monitor_threshold",
    "delta_margins",
]

THM_BALL = "THM_BALL"
THM_CONVEX = "THM_CONVEX"
THM_SYM = "THM_SYM"
THM_THRESHOLD = "THM_THRESHOLD"

# Attached when the power is above the mass-critical value but below the
# proven floor: blow-up is expected there but not established.
CONJECTURAL = "CONJECTURAL"

ANTISYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class Hypothesis:
    name: str
    value: float
    bound: float
    relation: str
    satisfied: bool
    note: str = ""


@dataclass
class CriterionReport:
    theorem: str
    hypotheses: list[Hypothesis] = field(default_factory=list)
    margins: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)

    @property
    def verdict(self) -> bool:
        return all(h.satisfied for h in self.hypotheses)

    def add(self, name, value, bound, relation, note="") -> Hypothesis:
        ok = _compare(value, bound, relation)
        hyp = Hypothesis(name, float(value), float(bound), relation, bool(ok), note)
        self.hypotheses.append(hyp)
        return hyp

    def get(self, name) -> Hypothesis:
        for h in self.hypotheses:
            if h.name == name:
                return h
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "verdict": self.verdict,
            "hypotheses": [asdict(h) for h in self.hypotheses],
            "margins": dict(self.margins),
            "details": dict(self.details),
            "labels": list(self.labels),
        }


def _compare(value, bound, relation) -> bool:
    if relation == "<":
        return value < bound
    if relation == "<=":
        return value <= bound
    if relation == ">":
        return value > bound
    if relation == ">=":
        return value >= bound
    raise InvalidInputError(f"unknown relation {relation!r}")


def _check_dims(u0: ComplexField, d: int, p: float):
    if u0.grid.dim != d:
        raise InvalidInputError(f"field lives in d={u0.grid.dim}, report asked for d={d}")
    if not p > 1:
        raise InvalidInputError(f"exponent must exceed 1, got {p}")


def scaling_threshold(u0: ComplexField, p: float, mass_weight: float = 0.0) -> float:
    """Smallest ``lam`` with ``E[lam u0] + mass_weight * M[lam u0] < 0`` for all larger ``lam``.

    ``E[lam u] + c M[lam u] = lam**2 (A/2 + c M) - lam**(p+1) B / (p+1)`` with
    ``A = ||grad u||^2`` and ``B = ||u||_{p+1}^{p+1}``, so the crossing is explicit.
    Returns ``inf`` for the zero field.
    """
    a = fld.grad_sq(u0)
    b = fld.lp1_norm(u0, p)
    m = fld.mass(u0)
    if b <= 0:
        return math.inf
    return ((a / 2 + mass_weight * m) * (p + 1) / b) ** (1 / (p - 1))


def _variance_hypothesis(report: CriterionReport, u0: ComplexField):
    report.add(
        "finite_variance",
        upsilon2(u0),
        math.inf,
        "<",
        note="automatic on the truncated grid",
    )


def _power_floor(report: CriterionReport, d: int, p: float, floor: float):
    hyp = report.add("p_floor", p, floor, ">=")
    if not hyp.satisfied and p > 1 + 4 / d:
        report.labels.append(CONJECTURAL)


def check_thm_ball(u0: ComplexField, R: float, d: int, p: float) -> CriterionReport:
    """Blow-up outside a ball: ``p >= 5`` and negative (shifted) energy."""
    if d not in (2, 3):
        raise InvalidInputError(f"the ball criterion is checked for d = 2, 3, got {d}")
    _check_dims(u0, d, p)
    if not R > 0:
        raise InvalidInputError("R must be positive")
    obs = u0.grid.obstacle
    if obs.kind != "ball" or not obs.reflection_invariant or abs(obs.radius - R) > 1e-12 * R:
        raise InvalidInputError(f"grid obstacle is not the centred ball of radius {R}")

    rep = CriterionReport(THM_BALL)
    _power_floor(rep, d, p, 5.0)
    e, m = fld.energy(u0, p), fld.mass(u0)
    weight = 1 / (8 * R**2) if d == 2 else 0.0
    if d == 2:
        rep.add("shifted_energy", e + weight * m, 0.0, "<")
    else:
        rep.add("energy", e, 0.0, "<")
    _variance_hypothesis(rep, u0)
    rep.details.update(
        energy=e,
        mass=m,
        mass_weight=weight,
        lambda_star=scaling_threshold(u0, p, weight),
        R=float(R),
    )
    return rep


def check_thm_convex(u0: ComplexField, obstacle: ObstacleSpec | None, d: int, p: float) -> CriterionReport:
    """Blow-up outside a convex obstacle with ``M/m < d/(d-1)``.

    An obstacle failing the ratio condition gives a report whose verdict is
    False; it is not an error.
    """
    if d < 2:
        raise InvalidInputError(f"the convex criterion needs d >= 2, got {d}")
    _check_dims(u0, d, p)
    obstacle = u0.grid.obstacle if obstacle is None else obstacle
    if obstacle.dim != d:
        raise InvalidInputError("obstacle dimension differs from d")
    big, small = obstacle.M, obstacle.m
    ratio = big / small
    limit = d / (d - 1)
    rep = CriterionReport(THM_CONVEX)
    ratio_ok = rep.add("obstacle_ratio", ratio, limit, "<").satisfied
    floor = 1 + 4 / (d - ratio * (d - 1)) if ratio_ok else math.inf
    _power_floor(rep, d, p, floor)
    e, m = fld.energy(u0, p), fld.mass(u0)
    weight = big / (8 * small**3) if d == 2 else 0.0
    if d == 2:
        rep.add("shifted_energy", e + weight * m, 0.0, "<")
    else:
        rep.add("energy", e, 0.0, "<")
    _variance_hypothesis(rep, u0)
    rep.details.update(
        ratio=ratio,
        p_floor=floor,
        M=big,
        m=small,
        energy=e,
        mass=m,
        mass_weight=weight,
        lambda_star=scaling_threshold(u0, p, weight),
    )
    if not ratio_ok:
        rep.details["obstacle"] = "inadmissible"
    return rep


def check_thm_sym(u0: ComplexField, symmetry: SymmetryClass | None, d: int, p: float) -> CriterionReport:
    """Blow-up for data odd in every coordinate: ``p >= 1 + 4/d`` and ``E < 0``."""
    if d < 2:
        raise InvalidInputError(f"the symmetric criterion needs d >= 2, got {d}")
    _check_dims(u0, d, p)
    if not u0.grid.reflection_invariant:
        raise SymmetryError("obstacle is not invariant under coordinate reflections")
    full = SymmetryClass.full(d)
    rep = CriterionReport(THM_SYM)
    rep.add("p_floor", p, 1 + 4 / d, ">=")
    e = fld.energy(u0, p)
    rep.add("energy", e, 0.0, "<")
    defect = fld.antisymmetry_defect(u0, full)
    rep.add("antisymmetry", defect, ANTISYMMETRY_TOL, "<")
    _variance_hypothesis(rep, u0)
    declared = symmetry.antisymmetric_axes if symmetry is not None else None
    rep.details.update(
        energy=e,
        mass=fld.mass(u0),
        antisymmetry_defect=defect,
        declared_axes=list(declared) if declared is not None else None,
        lambda_star=scaling_threshold(u0, p),
    )
    if symmetry is not None and not symmetry.is_full(d):
        rep.details["declared_symmetry"] = "partial"
    return rep


def _threshold_exponent_check(d: int, p: float) -> float:
    s = critical_regularity(d, p)
    if d == 2 and not p > 3:
        raise InvalidInputError(f"d=2 needs p > 3, got {p}")
    if d == 3 and not 1 + 4 / 3 < p < 5:
        raise InvalidInputError(f"d=3 needs 7/3 < p < 5, got {p}")
    if d not in (2, 3):
        raise InvalidInputError(f"threshold criterion is checked for d = 2, 3, got {d}")
    return s


def _profile_check(profile: GroundStateProfile, d: int, p: float):
    if profile.d != d or abs(profile.p - p) > 1e-12:
        raise InvalidInputError(f"profile is for (d, p) = ({profile.d}, {profile.p}), not ({d}, {p})")


def _threshold_products(u0: ComplexField, p: float, s: float):
    m = fld.mass(u0)
    e = fld.energy(u0, p)
    g = fld.grad_sq(u0)
    me = m ** ((1 - s) / s) * e
    gn = math.sqrt(m) ** (1 - s) * math.sqrt(g) ** s
    return m, e, g, me, gn


def check_threshold(u0: ComplexField, profile: GroundStateProfile, d: int, p: float) -> CriterionReport:
    """Mass-energy below the ground state and mass-gradient above it."""
    s = _threshold_exponent_check(d, p)
    _check_dims(u0, d, p)
    _profile_check(profile, d, p)
    q_me = profile.mass ** ((1 - s) / s) * profile.energy
    q_gn = math.sqrt(profile.mass) ** (1 - s) * math.sqrt(profile.grad_sq) ** s
    m, e, g, me, gn = _threshold_products(u0, p, s)
    rep = CriterionReport(THM_THRESHOLD)
    rep.add("mass_energy", me, q_me, "<")
    rep.add("mass_gradient", gn, q_gn, ">")
    rep.details.update(s_c=s, mass=m, energy=e, grad_sq=g, exponent=(1 - s) / s)
    if rep.verdict:
        rep.margins.update(zip(("delta1", "delta2"), delta_margins(u0, profile, d, p)))
    return rep


def threshold_function(profile: GroundStateProfile):
    """``f(x) = x**2/2 - C_GN/(p+1) * x**(d(p-1)/2)`` and its maximiser.

    Returns ``(f, x1)``; ``f(x1)`` equals ``M[Q]**((1-s)/s) * E[Q]``.
    """
    d, p = profile.d, profile.p
    c = profile.c_gn
    k = d * (p - 1) / 2
    s = critical_regularity(d, p)

    def f(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x**2 - c / (p + 1) * x**k

    x1 = math.sqrt(profile.grad_sq) * math.sqrt(profile.mass) ** ((1 - s) / s)
    return f, x1


def delta_margins(u0: ComplexField, profile: GroundStateProfile, d: int, p: float):
    """Margins ``(delta1, delta2)`` by which the data clear the two thresholds.

    ``delta1 = 1 - M**(1-s) E**s / (M_Q**(1-s) E_Q**s)``; it is 1 by
    convention when ``E <= 0``.  ``delta2 = x2/x1 - 1`` where ``x2 > x1`` solves
    ``f(x2) = (1 - delta1) f(x1)``.  Returns None if a threshold fails.
    """
    s = _threshold_exponent_check(d, p)
    _check_dims(u0, d, p)
    _profile_check(profile, d, p)
    m, e, _, me, gn = _threshold_products(u0, p, s)
    q_me = profile.mass ** ((1 - s) / s) * profile.energy
    q_gn = math.sqrt(profile.mass) ** (1 - s) * math.sqrt(profile.grad_sq) ** s
    if not (me < q_me and gn > q_gn):
        return None
    if e <= 0:
        delta1 = 1.0
    else:
        delta1 = 1 - (m ** (1 - s) * e**s) / (profile.mass ** (1 - s) * profile.energy**s)
    f, x1 = threshold_function(profile)
    level = (1 - delta1) * float(f(x1))
    hi = 2 * x1
    while f(hi) > level:
        hi *= 2
    x2 = brentq(lambda x: float(f(x)) - level, x1, hi, xtol=1e-15 * x1, rtol=1e-15, maxiter=200)
    return delta1, x2 / x1 - 1


def threshold_trace(series, profile: GroundStateProfile, t_stop=None) -> dict:
    """Mass-gradient product along a recorded run, against the ground state.

    Uses the initial mass with the gradient at each row.  Rows after
    ``t_stop`` are ignored.
    """
    s = critical_regularity(profile.d, profile.p)
    q_gn = math.sqrt(profile.mass) ** (1 - s) * math.sqrt(profile.grad_sq) ** s
    t = np.asarray(series.times, dtype=float)
    if t.size == 0:
        return {"t": t, "value": t, "bound": q_gn, "holds": True, "first_failure": None, "empty": True}
    keep = np.ones(t.size, bool) if t_stop is None else t <= t_stop
    m0 = series.column("mass")[0]
    vals = math.sqrt(m0) ** (1 - s) * np.sqrt(series.column("grad_sq")) ** s
    ok = vals > q_gn
    bad = np.flatnonzero(keep & ~ok)
    return {
        "t": t[keep],
        "value": vals[keep],
        "bound": q_gn,
        "holds": bad.size == 0,
        "first_failure": float(t[bad[0]]) if bad.size else None,
        "empty": False,
    }


def monitor_threshold(series, profile: GroundStateProfile, d: int, p: float, t_stop=None) -> bool:
    """True iff the mass-gradient product stays above the ground state's at every row."""
    _threshold_exponent_check(d, p)
    _profile_check(profile, d, p)
    if series.d != d:
        raise InvalidInputError("series dimension differs from d")
    trace = threshold_trace(series, profile, t_stop)
    if trace["empty"]:
        warnings.warn("empty series: threshold monitor holds vacuously", RuntimeWarning, stacklevel=2)
    elif not trace["holds"]:
        logger.info("threshold fails first at t=%g", trace["first_failure"])
    return bool(trace["holds"])
