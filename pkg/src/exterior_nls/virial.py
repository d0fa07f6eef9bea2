"""Weighted moments of |u|^2 and the analytic formulas for their time derivatives.

Every right-hand side is assembled term by term from grid quantities:

* volume integrals are ``h**d`` node sums with the nodal gradient, also
  inside the energy that appears in the second-derivative formulas;
* surface integrals use the face quadrature of :mod:`geometry` with
  ``|grad u|^2`` rebuilt from the derivative along each face's lattice line;
* for fields odd in every coordinate, integrals over the closed quadrant
  ``{x_j >= 0}`` weight nodes on a coordinate plane by 1/2 per vanishing
  coordinate.  The quadrant boundary contains pieces of the coordinate
  planes, where ``u = 0`` but ``grad u`` does not vanish; their flux is
  integrated explicitly.

Second-derivative functions return unnormalised values (no 1/16 factor).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import field as fld
from .errors import InvalidInputError, SymmetryError
from .field import ComplexField, SymmetryClass
from .geometry import ExteriorGrid, ObstacleSpec, face_quadrant_weight, surface_integral

logger = logging.getLogger(__name__)

IDENTITY_NAMES = (
    "poho1",
    "poho2",
    "dt_ups2",
    "d2t_ups2",
    "dt_ups1",
    "d2t_ups1",
    "d2t_gamma_j",
    "d2t_V_ball",
    "d2t_V_convex",
    "d2t_V_sym",
)

_NORMAL_GUARD = 1e-12


# -- basic quadratures -------------------------------------------------------


def _vol(u: ComplexField, weight=None, power: float = 2.0) -> float:
    dens = np.abs(u.values) ** power
    if weight is not None:
        dens = dens * weight
    return float(np.sum(dens) * u.grid.cell_volume)


def _radial_parts(u: ComplexField):
    """Nodal gradient, radial derivative and squared angular gradient."""
    grad = fld.gradient(u)
    x = u.grid.positions
    r = u.grid.radius
    radial = np.einsum("kn,nk->n", grad, x) / r
    full = np.sum(np.abs(grad) ** 2, axis=0)
    angular = np.maximum(full - np.abs(radial) ** 2, 0.0)
    return grad, radial, angular


def _kinetic(u: ComplexField) -> float:
    """``int |grad u|^2`` from the nodal gradient."""
    grad = fld.gradient(u)
    return float(np.sum(np.abs(grad) ** 2) * u.grid.cell_volume)


def _energy(u: ComplexField, p: float) -> float:
    """Energy with the nodal-gradient kinetic term.

    The discrete flow moves mass at the group velocity of the grid
    Laplacian, whose symbol is that of the centred difference; with this
    kinetic term the interior part of each second-derivative formula matches
    the discrete dynamics to fourth order instead of second.
    """
    return 0.5 * _kinetic(u) - fld.lp1_norm(u, p) / (p + 1)


def boundary_weighted_integral(u: ComplexField) -> float:
    """``int_{boundary} |grad u|^2 (x.n) dsigma``."""
    faces = u.grid.faces
    return surface_integral(u.grid, fld.boundary_grad_sq(u) * faces.x_dot_n)


def upsilon1(u: ComplexField) -> float:
    """``int |x| |u|^2``."""
    return _vol(u, u.grid.radius)


def upsilon2(u: ComplexField) -> float:
    """``int |x|^2 |u|^2``."""
    return _vol(u, u.grid.radius**2)


def dt_upsilon2(u: ComplexField) -> float:
    """``4 Im int conj(u) x.grad u``."""
    grad = fld.gradient(u)
    xg = np.einsum("kn,nk->n", grad, u.grid.positions)
    return float(4 * np.imag(np.vdot(u.values, xg)) * u.grid.cell_volume)


def dt_upsilon1(u: ComplexField) -> float:
    """``2 Im int conj(u) (x/|x|).grad u``; half of it is the radial momentum W."""
    _, radial, _ = _radial_parts(u)
    return float(2 * np.imag(np.vdot(u.values, radial)) * u.grid.cell_volume)


def _nonlinear_coefficient(d: int, p: float) -> float:
    return d / 2 - (d + 2) / (p + 1)


def d2t_upsilon2_rhs(u: ComplexField, p: float) -> float:
    """``16 [E - (d/2 - (d+2)/(p+1)) int|u|^{p+1} / 2 - int_bdry |grad u|^2 x.n / 4]``."""
    d = u.grid.dim
    e = _energy(u, p)
    lp1 = fld.lp1_norm(u, p)
    bdry = boundary_weighted_integral(u)
    return 16 * (e - 0.5 * _nonlinear_coefficient(d, p) * lp1 - 0.25 * bdry)


def upsilon1_rhs_terms(u: ComplexField, p: float) -> dict:
    """Separate pieces of the second derivative of ``int |x||u|^2``."""
    d = u.grid.dim
    r = u.grid.radius
    _, _, angular = _radial_parts(u)
    faces = u.grid.faces
    bgs = fld.boundary_grad_sq(u)
    return {
        "inverse_cube": (d - 1) * (d - 3) * _vol(u, r**-3),
        "angular": 4 * float(np.sum(angular / r) * u.grid.cell_volume),
        "nonlinear": -2 * (d - 1) * (p - 1) / (p + 1) * _vol(u, 1 / r, power=p + 1),
        "boundary": -2 * surface_integral(u.grid, bgs * faces.x_dot_n / faces.radius),
    }


def d2t_upsilon1_rhs(u: ComplexField, p: float) -> float:
    return float(sum(upsilon1_rhs_terms(u, p).values()))


# -- Pohozaev-type identities --------------------------------------------------


def pohozaev_terms(u: ComplexField) -> dict:
    """Both sides of the two integration-by-parts identities for Laplacian u.

    Away from the obstacle the checker uses fourth-order stencils, so that
    the residual measures the identities rather than interior truncation.
    """
    g = u.grid
    d = g.dim
    vol = g.cell_volume
    wide_lap, wide_grad = g.wide_operators
    lap = wide_lap @ u.values
    grad = np.stack([G @ u.values for G in wide_grad])
    r = g.radius
    x = g.positions
    radial = np.einsum("kn,nk->n", grad, x) / r
    full = np.sum(np.abs(grad) ** 2, axis=0)
    angular = np.maximum(full - np.abs(radial) ** 2, 0.0)
    xg = radial * r
    faces = g.faces
    bgs = fld.boundary_grad_sq(u)

    lhs1 = float(np.real(np.vdot(lap, 0.5 * d * u.values + xg)) * vol)
    rhs1 = -float(np.sum(full) * vol) + 0.5 * surface_integral(g, bgs * faces.x_dot_n)
    lhs2 = float(np.real(np.vdot(lap, radial + 0.5 * (d - 1) * u.values / r)) * vol)
    rhs2 = (
        -0.25 * (d - 1) * (d - 3) * _vol(u, r**-3)
        - float(np.sum(angular / r) * vol)
        + 0.5 * surface_integral(g, bgs * faces.x_dot_n / faces.radius)
    )
    return {"lhs1": lhs1, "rhs1": rhs1, "lhs2": lhs2, "rhs2": rhs2}


def pohozaev_residuals(u: ComplexField, p=None) -> tuple[float, float]:
    """Absolute residuals of the two identities (``p`` is not used)."""
    g = u.grid
    outer = g.radius > g.R_out - 4 * g.h
    if np.any(np.abs(u.values[outer]) > 1e-8 * max(np.max(np.abs(u.values)), 1e-300)):
        logger.warning("field is not small near the truncation shell; the identities assume decay")
    t = pohozaev_terms(u)
    return abs(t["lhs1"] - t["rhs1"]), abs(t["lhs2"] - t["rhs2"])


# -- modified variance for balls and convex obstacles --------------------------


def variance_constant(R: float) -> float:
    """Additive constant of the modified variance weight.

    ``|x|^2 - 2R|x| + 10`` stays positive only for ``R <= sqrt(10)``; past
    that the weight becomes ``(|x| - R)^2 + 1``.
    """
    if R <= math.sqrt(10.0):
        return 10.0
    logger.info("R=%g > sqrt(10): using weight (|x|-R)^2 + 1", R)
    return R * R + 1.0


def _ball_radius(grid: ExteriorGrid, R=None) -> float:
    obs = grid.obstacle
    if obs.kind != "ball" and not (obs.is_ball_like and obs.kind == "ellipsoid"):
        raise InvalidInputError("this variance needs a ball obstacle")
    if not obs.is_ball_like:
        raise InvalidInputError("the ball must be centred at the origin")
    if R is None:
        return obs.M
    if abs(R - obs.M) > 1e-12 * obs.M:
        raise InvalidInputError(f"R={R} does not match the obstacle radius {obs.M}")
    return float(R)


def _modified_variance(u: ComplexField, R: float) -> float:
    r = u.grid.radius
    return _vol(u, r**2 - 2 * R * r + variance_constant(R))


def _modified_variance_terms(u: ComplexField, p: float, R: float) -> dict:
    """Pieces of ``d^2/dt^2`` of ``int (|x|^2 - 2R|x| + c)|u|^2``."""
    d = u.grid.dim
    r = u.grid.radius
    _, _, angular = _radial_parts(u)
    faces = u.grid.faces
    bgs = fld.boundary_grad_sq(u)
    vol = u.grid.cell_volume
    return {
        "energy": 16 * _energy(u, p),
        "angular": -8 * R * float(np.sum(angular / r) * vol),
        "nonlinear": -8 * _nonlinear_coefficient(d, p) * fld.lp1_norm(u, p)
        + 4 * R * (d - 1) * (p - 1) / (p + 1) * _vol(u, 1 / r, power=p + 1),
        "inverse_cube": -2 * R * (d - 1) * (d - 3) * _vol(u, r**-3),
        "boundary": 4 * surface_integral(u.grid, bgs * faces.x_dot_n * (R / faces.radius - 1)),
    }


def variance_ball(u: ComplexField, R=None) -> float:
    return _modified_variance(u, _ball_radius(u.grid, R))


def variance_ball_terms(u: ComplexField, p: float, R=None) -> dict:
    return _modified_variance_terms(u, p, _ball_radius(u.grid, R))


def d2t_variance_ball_rhs(u: ComplexField, p: float, R=None) -> float:
    return float(sum(variance_ball_terms(u, p, R).values()))


def _convex_M(grid: ExteriorGrid, obstacle=None) -> float:
    obs = grid.obstacle if obstacle is None else obstacle
    if not isinstance(obs, ObstacleSpec):
        raise InvalidInputError("obstacle must be an ObstacleSpec")
    return obs.M


def variance_convex(u: ComplexField, obstacle=None) -> float:
    return _modified_variance(u, _convex_M(u.grid, obstacle))


def variance_convex_terms(u: ComplexField, p: float, obstacle=None) -> dict:
    return _modified_variance_terms(u, p, _convex_M(u.grid, obstacle))


def d2t_variance_convex_rhs(u: ComplexField, p: float, obstacle=None) -> float:
    return float(sum(variance_convex_terms(u, p, obstacle).values()))


def convex_nonlinear_coefficient(d: int, p: float, ratio: float) -> float:
    """Coefficient of ``int |u|^{p+1}`` after bounding ``1/|x|`` by ``1/m``; ``ratio = M/m``."""
    return -((p - 1) * (d - ratio * (d - 1)) - 4) / (4 * (p + 1))


# -- symmetric sector ----------------------------------------------------------


def require_odd(u: ComplexField, tol: float = 1e-12) -> None:
    cls = SymmetryClass.full(u.grid.dim)
    defect = fld.antisymmetry_defect(u, cls)
    if defect > tol:
        raise SymmetryError(f"field is not odd in every coordinate (defect {defect:.3g})")


def _check_axis(u: ComplexField, j: int):
    if not 0 <= j < u.grid.dim:
        raise InvalidInputError(f"axis {j} out of range for d={u.grid.dim}")


def gamma(u: ComplexField, j: int) -> float:
    """``int |x_j| |u|^2`` (axis ``j`` is 0-based)."""
    _check_axis(u, j)
    return _vol(u, np.abs(u.grid.positions[:, j]))


def _dt_gamma(u: ComplexField, j: int) -> float:
    g = u.grid
    dj = g.gradient[j] @ u.values
    q = g.quadrant_weight
    val = np.sum(q * np.imag(np.conj(u.values) * dj)) * g.cell_volume
    return float(2 ** (g.dim + 1) * val)


def dt_gamma(u: ComplexField, j: int) -> float:
    """``2^(d+1) Im int_{quadrant} d_j u conj(u)``; needs an odd field."""
    _check_axis(u, j)
    require_odd(u)
    return _dt_gamma(u, j)


def plane_flux(u: ComplexField, j: int) -> float:
    """``int |d_j u|^2`` over the quadrant part of the plane ``x_j = 0``.

    For a field odd in ``x_j``, ``u(s) = a s + b s^3 + ...`` along the
    normal, so ``(8 u(h) - u(2h)) / (6h)`` is a fourth-order slope.
    """
    g = u.grid
    idx = g.index
    on_plane = idx[:, j] == 0
    others = np.delete(idx[on_plane], j, axis=1)
    keep = np.all(others >= 0, axis=1)
    w = np.prod(np.where(others[keep] == 0, 0.5, 1.0), axis=1)
    base = idx[on_plane][keep]

    def shifted(k):
        ix = base.copy()
        ix[:, j] += k
        ids = g.fluid_id[tuple((ix + g.half_width).T)]
        return np.where(ids >= 0, u.values[np.maximum(ids, 0)], 0.0)

    slope = (8 * shifted(1) - shifted(2)) / (6 * g.h)
    return float(np.sum(w * np.abs(slope) ** 2) * g.h ** (g.dim - 1))


def _quadrant_boundary(u: ComplexField, weight: np.ndarray) -> float:
    g = u.grid
    vals = fld.boundary_grad_sq(u) * weight * face_quadrant_weight(g)
    return float(np.sum(vals * g.faces.weights))


def _d2t_gamma(u: ComplexField, j: int) -> float:
    nj = np.abs(u.grid.faces.normals[:, j])
    return 2 ** (u.grid.dim + 1) * (_quadrant_boundary(u, nj) + plane_flux(u, j))


def d2t_gamma_rhs(u: ComplexField, j: int) -> float:
    """``2^(d+1)`` times the quadrant-boundary integral of ``|grad u|^2 |n_j|``."""
    _check_axis(u, j)
    require_odd(u)
    return _d2t_gamma(u, j)


def variance_sym(u: ComplexField, C: float) -> float:
    """``int (|x|^2 - C sum|x_i| + C^2) |u|^2``."""
    if not C > 0:
        raise InvalidInputError("C must be positive")
    x = u.grid.positions
    w = u.grid.radius**2 - C * np.sum(np.abs(x), axis=1) + C * C
    return _vol(u, w)


def _sym_terms(u: ComplexField, p: float, C: float) -> dict:
    g = u.grid
    d = g.dim
    faces = g.faces
    bracket = 2 ** (d + 2) * np.abs(faces.x_dot_n) - 2 ** (d + 1) * C * np.sum(np.abs(faces.normals), axis=1)
    planes = sum(plane_flux(u, j) for j in range(d))
    return {
        "energy": 16 * _energy(u, p),
        "nonlinear": -8 * _nonlinear_coefficient(d, p) * fld.lp1_norm(u, p),
        "boundary": _quadrant_boundary(u, bracket) - 2 ** (d + 1) * C * planes,
    }


def variance_sym_terms(u: ComplexField, p: float, C: float) -> dict:
    if not C > 0:
        raise InvalidInputError("C must be positive")
    require_odd(u)
    return _sym_terms(u, p, C)


def d2t_variance_sym_rhs(u: ComplexField, p: float, C: float) -> float:
    return float(sum(variance_sym_terms(u, p, C).values()))


def sym_boundary_bracket(grid: ExteriorGrid, C: float) -> np.ndarray:
    """Per-face bracket ``2^(d+2)|x.n| - 2^(d+1) C sum|n_i|``."""
    f = grid.faces
    d = grid.dim
    return 2 ** (d + 2) * np.abs(f.x_dot_n) - 2 ** (d + 1) * C * np.sum(np.abs(f.normals), axis=1)


def recommended_C(grid: ExteriorGrid) -> float:
    """``2 max |x.n| / sum|n_i|`` over the boundary faces."""
    f = grid.faces
    s = np.sum(np.abs(f.normals), axis=1)
    ok = s >= _NORMAL_GUARD
    if not ok.all():
        logger.info("skipping %d faces with degenerate normals", int((~ok).sum()))
    return float(2 * np.max(np.abs(f.x_dot_n[ok]) / s[ok]))


# -- reports -------------------------------------------------------------------


@dataclass
class IdentityRecord:
    name: str
    lhs: float
    rhs: float
    abs_residual: float
    rel_residual: float
    detail: dict = field(default_factory=dict)


@dataclass
class VirialReport:
    records: list = field(default_factory=list)

    def add(self, name, lhs, rhs, scale=None, **detail) -> IdentityRecord:
        if not any(name == n or name.startswith(n.rstrip("j")) for n in IDENTITY_NAMES):
            raise InvalidInputError(f"unknown identity {name!r}")
        lhs, rhs = float(lhs), float(rhs)
        res = abs(lhs - rhs)
        denom = abs(rhs) if scale is None else scale
        rel = res / denom if denom > 0 else (0.0 if res == 0 else math.inf)
        rec = IdentityRecord(name, lhs, rhs, res, rel, dict(detail))
        self.records.append(rec)
        return rec

    def get(self, name) -> IdentityRecord:
        for rec in self.records:
            if rec.name == name:
                return rec
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"identities": [asdict(r) for r in self.records]}


def second_difference(times, values):
    """Centred second differences on a uniform record; endpoints dropped."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 3:
        raise InvalidInputError("need at least three records")
    dt = np.diff(t)
    if np.ptp(dt) > 1e-9 * dt.mean():
        raise InvalidInputError("record spacing is not uniform")
    step = dt.mean()
    return t[1:-1], (v[2:] - 2 * v[1:-1] + v[:-2]) / step**2


def first_difference(times, values):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 3:
        raise InvalidInputError("need at least three records")
    dt = np.diff(t)
    if np.ptp(dt) > 1e-9 * dt.mean():
        raise InvalidInputError("record spacing is not uniform")
    return t[1:-1], (v[2:] - v[:-2]) / (2 * dt.mean())


def closure_error(times, values, rhs, order: int = 2) -> dict:
    """Compare a finite-difference derivative of a series with its formula.

    The relative error is ``max |FD - rhs| / max |rhs|`` over interior records.
    """
    fd_fn = second_difference if order == 2 else first_difference
    tc, fd = fd_fn(times, values)
    target = np.asarray(rhs, dtype=float)[1:-1]
    err = np.abs(fd - target)
    scale = float(np.max(np.abs(target)))
    return {
        "max_abs": float(err.max()),
        "scale": scale,
        "rel": float(err.max() / scale) if scale > 0 else math.inf,
        "fd": fd,
        "rhs": target,
        "t": tc,
    }


def series_identities(d: int, obstacle: ObstacleSpec, symmetric: bool) -> dict:
    """Map identity name -> (functional column, formula column, derivative order)."""
    table = {
        "dt_ups2": ("upsilon2", "momentum_x", 1),
        "d2t_ups2": ("upsilon2", "rhs_4_2", 2),
        "dt_ups1": ("upsilon1", "dt_upsilon1", 1),
        "d2t_ups1": ("upsilon1", "rhs_4_4", 2),
    }
    if obstacle.is_ball_like:
        table["d2t_V_ball"] = ("variance_ball", "rhs_variance_ball", 2)
    else:
        table["d2t_V_convex"] = ("variance_ball", "rhs_variance_ball", 2)
    if symmetric:
        for j in range(d):
            table[f"d2t_gamma_{j + 1}"] = (f"gamma_{j + 1}", f"rhs_5_1_{j + 1}", 2)
        table["d2t_V_sym"] = ("variance_sym", "rhs_variance_sym", 2)
    return table


def verify_identities(series, obstacle: ObstacleSpec, symmetric: bool, field_snapshot=None) -> VirialReport:
    """Check every applicable identity on a recorded run.

    ``series`` needs a ``closure(column, rhs_column, order)`` method (see
    :class:`evolution.DiagnosticsSeries`).  Time identities compare finite
    differences of the recorded functional with the recorded formula, and
    the worst record is reported.  With ``field_snapshot`` the two static
    integration-by-parts identities are added.
    """
    report = VirialReport()
    if field_snapshot is not None:
        t = pohozaev_terms(field_snapshot)
        scale = max(abs(t["lhs1"]), abs(t["rhs1"]), 1e-300)
        report.add("poho1", t["lhs1"], t["rhs1"], scale=scale)
        scale = max(abs(t["lhs2"]), abs(t["rhs2"]), 1e-300)
        report.add("poho2", t["lhs2"], t["rhs2"], scale=scale)
    for name, (col, rhs_col, order) in series_identities(series.d, obstacle, symmetric).items():
        c = series.closure(col, rhs_col, order=order)
        k = int(np.argmax(np.abs(c["fd"] - c["rhs"])))
        report.add(name, c["fd"][k], c["rhs"][k], scale=c["scale"], t=float(c["t"][k]), max_rel=c["rel"])
    return report
