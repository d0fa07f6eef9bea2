"""Crank-Nicolson time stepping, diagnostics recording and blow-up detection.

One step solves

    (I - i dt/2 L) u+ = (I + i dt/2 L) u + i dt g(u+, u)

with the energy-preserving nonlinear average

    g = [F(|u+|^2) - F(|u|^2)] / (|u+|^2 - |u|^2) * (u+ + u) / 2,
    F(s) = 2 s^((p+1)/2) / (p+1),

iterated to a fixed point.  ``L`` is the symmetric cut-cell Laplacian, so the
scheme conserves the discrete mass and the discrete energy (Dirichlet form
minus the potential term) up to the fixed-point and linear-solver tolerances.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import weakref
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import field as fld
from . import virial as vir
from .errors import InvalidInputError, SolverFailure
from .field import ComplexField
from .geometry import ExteriorGrid

logger = logging.getLogger(__name__)

__all__ = [
    "Stepper",
    "StepFailure",
    "step",
    "run",
    "DiagnosticsSeries",
    "BlowupVerdict",
    "detect_blowup",
    "diagnostics_columns",
    "COMPLETED",
    "BLOWUP_DETECTED",
    "TRUNCATION_CONTAMINATED",
]

COMPLETED = "COMPLETED"
BLOWUP_DETECTED = "BLOWUP_DETECTED"
TRUNCATION_CONTAMINATED = "TRUNCATION_CONTAMINATED"

_DIRECT_LIMIT = 600_000


class StepFailure(SolverFailure):
    """The nonlinear iteration of a single step did not converge."""


def _divided_power(a: np.ndarray, b: np.ndarray, q: float) -> np.ndarray:
    """(a**q - b**q) / (a - b) for a, b >= 0, without cancellation."""
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    out = np.zeros_like(hi)
    pos = hi > 0
    x = np.zeros_like(hi)
    x[pos] = lo[pos] / hi[pos] - 1.0
    small = pos & (x == 0)
    out[small] = q * hi[small] ** (q - 1)
    gen = pos & (x != 0)
    with np.errstate(divide="ignore"):
        # x = -1 (one level is zero) gives log1p = -inf and expm1 = -1
        out[gen] = hi[gen] ** (q - 1) * np.expm1(q * np.log1p(x[gen])) / x[gen]
    return out


def nonlinear_average(new: np.ndarray, old: np.ndarray, p: float) -> np.ndarray:
    """Energy-preserving approximation of |u|^(p-1) u between two levels."""
    a = np.abs(new) ** 2
    b = np.abs(old) ** 2
    return _divided_power(a, b, 0.5 * (p + 1)) * (new + old) / (p + 1)


class _LinearSolver:
    def __init__(self, L: sp.csr_matrix, dt: float, method: str, rtol: float):
        n = L.shape[0]
        eye = sp.identity(n, dtype=complex, format="csr")
        self.A = (eye - 0.5j * dt * L).tocsc()
        self.B = (eye + 0.5j * dt * L).tocsr()
        self.method = method
        self.rtol = rtol
        if method == "direct":
            self._lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A")
        else:
            inv_diag = 1.0 / self.A.diagonal()
            self._precond = spla.LinearOperator((n, n), matvec=lambda v: inv_diag * v, dtype=complex)
            self._A_csr = self.A.tocsr()

    def solve(self, b: np.ndarray, x0=None) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(b)
        x, info = spla.bicgstab(self._A_csr, b, x0=x0, rtol=self.rtol, atol=0.0, maxiter=500, M=self._precond)
        if info != 0:
            raise StepFailure(f"linear solve did not converge (info={info})")
        return x


class Stepper:
    """Crank-Nicolson integrator bound to one grid and one exponent.

    ``solver`` is ``"direct"`` (sparse LU), ``"iterative"`` (Jacobi-BiCGSTAB)
    or ``"auto"`` (LU in 2D below a size limit).  ``p=None`` drops the
    nonlinearity.
    """

    def __init__(self, grid: ExteriorGrid, p, solver="auto", tol=1e-12, max_iter=50, linear_tol=1e-13):
        if p is not None and not p > 1:
            raise InvalidInputError(f"exponent must exceed 1, got {p}")
        if solver == "auto":
            solver = "direct" if grid.dim == 2 and grid.n_fluid <= _DIRECT_LIMIT else "iterative"
        if solver not in ("direct", "iterative"):
            raise InvalidInputError(f"unknown solver {solver!r}")
        self.grid = grid
        self.p = p
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self.linear_tol = linear_tol
        self._cache: dict[float, _LinearSolver] = {}
        self.last_iterations = 0

    def _linear(self, dt: float) -> _LinearSolver:
        lin = self._cache.get(dt)
        if lin is None:
            if len(self._cache) >= 4:
                self._cache.pop(next(iter(self._cache)))
            lin = _LinearSolver(self.grid.laplacian, dt, self.solver, self.linear_tol)
            self._cache[dt] = lin
        return lin

    def step(self, u: ComplexField, dt: float) -> ComplexField:
        if u.grid is not self.grid:
            raise InvalidInputError("field lives on a different grid")
        if not dt > 0:
            raise InvalidInputError(f"dt must be positive, got {dt}")
        lin = self._linear(dt)
        old = u.values
        rhs0 = lin.B @ old
        if self.p is None:
            new = lin.solve(rhs0, x0=old)
            self.last_iterations = 1
            return u.replace(values=new, time=u.time + dt)

        guess = old
        prev_change = math.inf
        # a diverging iteration overflows before the finiteness check catches it
        with np.errstate(over="ignore", invalid="ignore"):
            for it in range(1, self.max_iter + 1):
                g = nonlinear_average(guess, old, self.p)
                new = lin.solve(rhs0 + 1j * dt * g, x0=guess)
                if not np.all(np.isfinite(new)):
                    raise StepFailure("non-finite values in the nonlinear iteration")
                scale = max(np.linalg.norm(new), 1e-300)
                change = np.linalg.norm(new - guess) / scale
                guess = new
                if change <= self.tol:
                    self.last_iterations = it
                    return u.replace(values=new, time=u.time + dt)
                if it > 3 and change > 0.9 * prev_change and change > 1e-6:
                    break
                prev_change = change
        raise StepFailure(f"fixed-point iteration stalled (last change {change:.3g})")


_steppers: "weakref.WeakKeyDictionary[ExteriorGrid, dict]" = weakref.WeakKeyDictionary()


def step(u: ComplexField, dt: float, p, **options) -> ComplexField:
    """Advance ``u`` by one step; steppers are cached per grid and options."""
    per_grid = _steppers.setdefault(u.grid, {})
    key = (p, tuple(sorted(options.items())))
    stepper = per_grid.get(key)
    if stepper is None:
        stepper = Stepper(u.grid, p, **options)
        per_grid[key] = stepper
    return stepper.step(u, dt)


# -- diagnostics -----------------------------------------------------------------


def diagnostics_columns(d: int) -> list[str]:
    cols = ["t", "mass", "energy", "grad_sq", "lp1_norm", "upsilon1", "upsilon2"]
    cols += [f"gamma_{j + 1}" for j in range(d)]
    cols += ["variance_ball", "variance_sym", "momentum_x", "rhs_4_2", "rhs_4_4"]
    cols += [f"rhs_5_1_{j + 1}" for j in range(d)]
    cols += ["boundary_int_weighted", "annulus_mass"]
    # derived columns used by the identity checks
    cols += ["dt_upsilon1"]
    cols += [f"dt_gamma_{j + 1}" for j in range(d)]
    cols += ["rhs_variance_ball", "rhs_variance_sym", "bracket_variance_ball", "bracket_variance_sym"]
    return cols


def _row(u: ComplexField, p: float, C: float, annulus_width: float) -> dict:
    g = u.grid
    d = g.dim
    M = g.obstacle.M
    row = {
        "t": u.time,
        "mass": fld.mass(u),
        "energy": fld.energy(u, p),
        "grad_sq": fld.grad_sq(u),
        "lp1_norm": fld.lp1_norm(u, p),
        "upsilon1": vir.upsilon1(u),
        "upsilon2": vir.upsilon2(u),
    }
    for j in range(d):
        row[f"gamma_{j + 1}"] = vir.gamma(u, j)
    row["variance_ball"] = vir._modified_variance(u, M)
    row["variance_sym"] = vir.variance_sym(u, C)
    row["momentum_x"] = vir.dt_upsilon2(u)
    row["rhs_4_2"] = vir.d2t_upsilon2_rhs(u, p)
    row["rhs_4_4"] = vir.d2t_upsilon1_rhs(u, p)
    for j in range(d):
        row[f"rhs_5_1_{j + 1}"] = vir._d2t_gamma(u, j)
    row["boundary_int_weighted"] = vir.boundary_weighted_integral(u)
    row["annulus_mass"] = fld.annulus_mass(u, annulus_width)
    row["dt_upsilon1"] = vir.dt_upsilon1(u)
    for j in range(d):
        row[f"dt_gamma_{j + 1}"] = vir._dt_gamma(u, j)
    ball_terms = vir._modified_variance_terms(u, p, M)
    sym_terms = vir._sym_terms(u, p, C)
    row["rhs_variance_ball"] = float(sum(ball_terms.values()))
    row["rhs_variance_sym"] = float(sum(sym_terms.values()))
    row["bracket_variance_ball"] = ball_terms["boundary"]
    row["bracket_variance_sym"] = sym_terms["boundary"]
    return row


@dataclass
class DiagnosticsSeries:
    """Time-indexed table of functionals and identity right-hand sides."""

    d: int
    p: float
    C: float
    columns: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    annulus_width: float = 2.0
    final: ComplexField | None = field(default=None, repr=False, compare=False)

    @classmethod
    def for_grid(cls, grid: ExteriorGrid, p: float, C=None, annulus_width=2.0) -> "DiagnosticsSeries":
        if C is None:
            C = vir.recommended_C(grid)
        return cls(d=grid.dim, p=float(p), C=float(C), columns=diagnostics_columns(grid.dim), annulus_width=annulus_width)

    def record(self, u: ComplexField) -> dict:
        row = _row(u, self.p, self.C, self.annulus_width)
        if self.rows and not row["t"] > self.rows[-1][0]:
            raise InvalidInputError("record times must increase strictly")
        self.rows.append([row[c] for c in self.columns])
        return row

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def uniform_part(self) -> int:
        """Number of leading rows with uniform time spacing."""
        t = self.times
        if len(t) < 3:
            return len(t)
        step = t[1] - t[0]
        gaps = np.diff(t)
        bad = np.flatnonzero(np.abs(gaps - step) > 1e-9 * step)
        return len(t) if bad.size == 0 else int(bad[0]) + 1

    def closure(self, column: str, rhs_column: str, order: int = 2) -> dict:
        """Finite-difference check of ``column`` against ``rhs_column`` on the uniform rows."""
        n = self.uniform_part()
        return vir.closure_error(self.times[:n], self.column(column)[:n], self.column(rhs_column)[:n], order=order)

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format(v, ".17g") for v in r])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, d: int, p: float, C: float) -> "DiagnosticsSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            cols = next(reader)
            rows = [[float(v) for v in r] for r in reader]
        return cls(d=d, p=p, C=C, columns=cols, rows=rows)


@dataclass
class BlowupVerdict:
    status: str
    t_detect: float | None
    growth_factor: float
    reason: str = ""
    t_final: float = 0.0
    dt_final: float = 0.0
    steps: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def detect_blowup(series: DiagnosticsSeries, grad_factor: float = 10.0, dt_min=None, annulus_tol: float = 1e-6) -> BlowupVerdict:
    """Classify a run from its recorded diagnostics.

    Contamination of the truncation annulus takes precedence over gradient
    growth when it happens first.  A collapse of the time step below
    ``dt_min`` (stored in ``series.meta``) also counts as blow-up.
    """
    if not len(series):
        raise InvalidInputError("empty series")
    t = series.times
    gs = series.column("grad_sq")
    ann = series.column("annulus_mass")
    mass = series.column("mass")
    growth = math.sqrt(max(gs.max() / gs[0], 0.0)) if gs[0] > 0 else (math.inf if gs.max() > 0 else 1.0)
    crossed = np.flatnonzero(gs >= grad_factor**2 * gs[0]) if gs[0] > 0 else np.array([], dtype=int)
    dirty = np.flatnonzero(ann > annulus_tol * mass)
    meta = series.meta
    common = dict(t_final=float(t[-1]), dt_final=float(meta.get("dt_final", 0.0)), steps=int(meta.get("steps", 0)))
    if dirty.size and (not crossed.size or dirty[0] <= crossed[0]):
        return BlowupVerdict(TRUNCATION_CONTAMINATED, float(t[dirty[0]]), growth, "mass reached the truncation annulus", **common)
    if crossed.size:
        return BlowupVerdict(BLOWUP_DETECTED, float(t[crossed[0]]), growth, "gradient norm growth", **common)
    collapsed = bool(meta.get("step_collapsed", False))
    if dt_min is not None and meta.get("dt_final", math.inf) < dt_min:
        collapsed = True
    if collapsed:
        return BlowupVerdict(BLOWUP_DETECTED, float(t[-1]), growth, "time step collapsed", **common)
    return BlowupVerdict(COMPLETED, None, growth, "", **common)


def run(
    u0: ComplexField,
    t_end: float,
    dt: float,
    p: float,
    record_every: int = 1,
    dt_min=None,
    grad_factor: float = 10.0,
    C=None,
    stepper: Stepper | None = None,
    annulus_width: float = 2.0,
    annulus_tol: float = 1e-6,
    solver: str = "auto",
    tol: float = 1e-12,
    callback=None,
):
    """Integrate from ``u0`` to ``t_end``; returns ``(series, verdict)``.

    Steps of size ``dt`` are split in halves when the nonlinear iteration
    fails, down to ``dt_min``; records are taken every ``record_every``
    full steps, so the record spacing is uniform.  The run stops early on
    gradient growth past ``grad_factor`` or on mass entering the annulus
    next to the truncation shell.
    """
    if not t_end > 0:
        raise InvalidInputError("t_end must be positive")
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    if int(record_every) < 1:
        raise InvalidInputError("record_every must be a positive integer")
    record_every = int(record_every)
    if dt_min is None:
        dt_min = dt / 2**8
    if stepper is None:
        stepper = Stepper(u0.grid, p, solver=solver, tol=tol)
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * t_end:
        raise InvalidInputError(f"t_end={t_end} is not a multiple of dt={dt}")

    series = DiagnosticsSeries.for_grid(u0.grid, p, C=C, annulus_width=annulus_width)
    u = u0.replace(time=0.0) if u0.time != 0.0 else u0
    series.record(u)
    gs0 = fld.grad_sq(u)
    level = 0
    collapsed = False
    steps_taken = 0
    t0 = 0.0
    for i in range(n_steps):
        while True:
            sub = dt / 2**level
            try:
                w = u
                for _ in range(2**level):
                    w = stepper.step(w, sub)
                    steps_taken += 1
                break
            except StepFailure as exc:
                level += 1
                logger.info("t=%.6g: %s; halving to dt=%g", u.time, exc, dt / 2**level)
                if dt / 2**level < dt_min:
                    collapsed = True
                    break
        if collapsed:
            break
        u = w.replace(time=t0 + (i + 1) * dt)
        gs = fld.grad_sq(u)
        grew = gs0 > 0 and gs >= grad_factor**2 * gs0
        dirty = fld.annulus_mass(u, annulus_width) > annulus_tol * fld.mass(u)
        if (i + 1) % record_every == 0 or grew or dirty:
            series.record(u)
            if callback is not None:
                callback(u, series)
        if grew or dirty:
            break
    series.meta.update(
        dt=dt,
        dt_final=dt / 2**level,
        dt_min=dt_min,
        steps=steps_taken,
        step_collapsed=collapsed,
        record_every=record_every,
    )
    series.final = u
    verdict = detect_blowup(series, grad_factor=grad_factor, annulus_tol=annulus_tol)
    return series, verdict
