"""Complex fields on an exterior grid: norms, conserved quantities, initial data.

Values are stored on FLUID nodes only; the field is zero on the obstacle and
on the truncation shell.  Every volume integral is the ``h**d`` node sum.
The gradient energy is the Dirichlet form of the grid Laplacian, i.e. the
sum of squared edge differences with one-sided differences on cut arms;
this is the quantity the time stepper conserves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SymmetryError
from .geometry import ExteriorGrid

__all__ = [
    "ComplexField",
    "SymmetryClass",
    "from_function",
    "mass",
    "grad_sq",
    "lp1_norm",
    "energy",
    "gradient",
    "symmetrize",
    "antisymmetry_defect",
    "boundary_slope",
    "boundary_grad_sq",
    "boundary_trace",
    "annulus_mass",
    "gaussian_bump",
    "ring_bump",
    "incoming_ring",
    "smoothstep",
    "pseudoconformal_ansatz",
]


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: ExteriorGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n_fluid,):
            raise InvalidInputError(f"expected {self.grid.n_fluid} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("field values must be finite")
        object.__setattr__(self, "values", v)

    def replace(self, values=None, time=None) -> "ComplexField":
        return ComplexField(
            self.grid,
            self.values if values is None else values,
            self.time if time is None else time,
        )

    def scaled(self, factor: complex) -> "ComplexField":
        return self.replace(values=factor * self.values)

    def conj(self) -> "ComplexField":
        return self.replace(values=np.conj(self.values))

    def to_full(self) -> np.ndarray:
        return self.grid.to_full(self.values)


@dataclass(frozen=True)
class SymmetryClass:
    """Set of axes (0-based) in which a field is odd."""

    antisymmetric_axes: tuple[int, ...] = ()

    def __post_init__(self):
        axes = tuple(sorted(set(int(a) for a in self.antisymmetric_axes)))
        if any(a < 0 for a in axes):
            raise InvalidInputError("axes must be non-negative")
        object.__setattr__(self, "antisymmetric_axes", axes)

    @classmethod
    def full(cls, d: int) -> "SymmetryClass":
        return cls(tuple(range(d)))

    def is_full(self, d: int) -> bool:
        return self.antisymmetric_axes == tuple(range(d))


def from_function(grid: ExteriorGrid, func, time: float = 0.0) -> ComplexField:
    """Sample ``func(x)`` with ``x`` of shape (n, d) on the fluid nodes."""
    return ComplexField(grid, np.asarray(func(grid.positions), dtype=complex), time)


def mass(u: ComplexField) -> float:
    return float(np.sum(np.abs(u.values) ** 2) * u.grid.cell_volume)


def grad_sq(u: ComplexField) -> float:
    """Discrete ``int |grad u|^2`` as the Dirichlet form ``-<L u, u>``."""
    v = u.values
    return float(-np.real(np.vdot(v, u.grid.laplacian @ v)) * u.grid.cell_volume)


def lp1_norm(u: ComplexField, p: float) -> float:
    """``int |u|^(p+1)``."""
    return float(np.sum(np.abs(u.values) ** (p + 1)) * u.grid.cell_volume)


def energy(u: ComplexField, p: float) -> float:
    return 0.5 * grad_sq(u) - lp1_norm(u, p) / (p + 1)


def gradient(u: ComplexField) -> np.ndarray:
    """Nodal gradient, shape (d, n)."""
    return np.stack([G @ u.values for G in u.grid.gradient])


def _check_axes(grid: ExteriorGrid, cls: SymmetryClass):
    if any(a >= grid.dim for a in cls.antisymmetric_axes):
        raise InvalidInputError(f"axes {cls.antisymmetric_axes} out of range for d={grid.dim}")
    if not grid.reflection_invariant:
        raise SymmetryError("grid is not invariant under coordinate reflections")


def symmetrize(u: ComplexField, cls: SymmetryClass) -> ComplexField:
    """Project onto fields that are odd in every axis of ``cls``.

    Each pass computes ``(u - u o reflection) / 2``; IEEE subtraction is
    antisymmetric, so the result is odd bit for bit.
    """
    _check_axes(u.grid, cls)
    v = u.values
    for axis in cls.antisymmetric_axes:
        perm = u.grid.reflection_permutation(axis)
        v = 0.5 * (v - v[perm])
    return u.replace(values=v)


def antisymmetry_defect(u: ComplexField, cls: SymmetryClass) -> float:
    """max |u + u o reflection| over the axes of ``cls``, relative to max |u|."""
    _check_axes(u.grid, cls)
    top = float(np.max(np.abs(u.values), initial=0.0))
    if top == 0.0:
        return 0.0
    worst = 0.0
    for axis in cls.antisymmetric_axes:
        perm = u.grid.reflection_permutation(axis)
        worst = max(worst, float(np.max(np.abs(u.values + u.values[perm]))))
    return worst / top


def boundary_slope(u: ComplexField) -> np.ndarray:
    """Derivative of u at each face along its lattice line, into the fluid."""
    faces = u.grid.faces
    return np.einsum("fj,fj->f", faces.slope_weights, u.values[faces.line_nodes]) / u.grid.h


def boundary_grad_sq(u: ComplexField) -> np.ndarray:
    """|grad u|^2 at each face.

    Only the normal derivative survives on the surface, and the derivative
    along the lattice line is its projection ``n_k * du/dn``.  Tangential
    crossings (``n_k ~ 0``) carry zero surface weight and get the value 0.
    """
    nk = u.grid.faces.normal_along_axis
    s2 = np.abs(boundary_slope(u)) ** 2
    out = np.zeros_like(s2)
    ok = nk > 1e-12
    out[ok] = s2[ok] / nk[ok] ** 2
    return out


def boundary_trace(u: ComplexField) -> np.ndarray:
    """Value of the line cubic extrapolated to each face (should be ~0)."""
    faces = u.grid.faces
    return np.einsum("fj,fj->f", faces.trace_weights, u.values[faces.line_nodes])


def annulus_mass(u: ComplexField, width: float = 2.0) -> float:
    """Mass in the shell ``R_out - width < |x| < R_out``."""
    sel = u.grid.radius > u.grid.R_out - width
    return float(np.sum(np.abs(u.values[sel]) ** 2) * u.grid.cell_volume)


def _clearance(grid, clearance):
    if clearance is None:
        return 1.0
    r_in, r_out = clearance
    if not r_out > r_in:
        raise InvalidInputError("clearance radii must increase")
    return smoothstep((grid.radius - r_in) / (r_out - r_in))


def gaussian_bump(grid, center, width, amplitude=1.0, momentum=None, clearance=None) -> ComplexField:
    """``amplitude * exp(-|x-c|^2 / (2 width^2) + i k.x)``.

    ``clearance=(r_in, r_out)`` multiplies by a ramp that vanishes for
    ``|x| <= r_in``, so the data can be made to vanish smoothly on the obstacle.
    """
    c = np.asarray(center, dtype=float)
    if c.shape != (grid.dim,):
        raise InvalidInputError("center has the wrong dimension")
    if not width > 0:
        raise InvalidInputError("width must be positive")
    x = grid.positions
    vals = amplitude * np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * width**2))
    if momentum is not None:
        k = np.asarray(momentum, dtype=float)
        vals = vals * np.exp(1j * (x @ k))
    return ComplexField(grid, vals * _clearance(grid, clearance))


def ring_bump(grid, radius, width, amplitude=1.0, mode=0, clearance=None) -> ComplexField:
    """Radial Gaussian ring ``exp(-(|x|-radius)^2 / (2 width^2))``.

    ``mode`` multiplies by ``cos(mode * phi)`` in the (x1, x2) plane.
    """
    if not width > 0 or not radius > 0:
        raise InvalidInputError("radius and width must be positive")
    x = grid.positions
    r = grid.radius
    vals = amplitude * np.exp(-((r - radius) ** 2) / (2 * width**2))
    if mode:
        vals = vals * np.cos(mode * np.arctan2(x[:, 1], x[:, 0]))
    return ComplexField(grid, (vals * _clearance(grid, clearance)).astype(complex))


def incoming_ring(grid, radius, width, wavenumber, amplitude=1.0, symmetry=None) -> ComplexField:
    """Radial wave packet travelling toward the obstacle.

    ``(1 - 1/(1 + level))**3 * exp(-(|x| - radius)^2 / (2 width^2) - i k |x|)``
    scaled so that ``max |u| = amplitude``.  The boundary factor is analytic
    and vanishes to third order on the surface, so the data carry no
    high-frequency tail.  With ``symmetry`` the packet is multiplied by
    ``prod x_k / |x|`` over the odd axes and projected onto that class.
    """
    if not width > 0 or not radius > 0:
        raise InvalidInputError("radius and width must be positive")
    x = grid.positions
    r = grid.radius
    s = 1.0 + grid.obstacle.level(x)
    vals = (1.0 - 1.0 / s) ** 3 * np.exp(-((r - radius) ** 2) / (2 * width**2) - 1j * wavenumber * r)
    if symmetry is not None:
        _check_axes(grid, symmetry)
        for axis in symmetry.antisymmetric_axes:
            vals = vals * x[:, axis] / r
    top = np.max(np.abs(vals), initial=0.0)
    if top == 0.0:
        raise InvalidInputError("packet vanishes on the grid")
    u = ComplexField(grid, amplitude * vals / top)
    return u if symmetry is None else symmetrize(u, symmetry)


def smoothstep(s):
    """C2 quintic ramp: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def pseudoconformal_ansatz(grid, profile, T, t, x0, cutoff_radii) -> ComplexField:
    """Leading term of the self-similar blow-up solution at mass-critical p.

    ``(T-t)**(-d/2) Q(|x-x0|/(T-t)) Psi(x) exp(i (4 - |x-x0|^2) / (4 (T-t)))``,
    where Psi ramps from 0 at ``|x| = r_in`` to 1 at ``|x| = r_out``.
    """
    d = grid.dim
    if profile.d != d:
        raise InvalidInputError(f"profile dimension {profile.d} differs from grid dimension {d}")
    if abs(profile.p - (1 + 4 / d)) > 1e-12:
        raise InvalidInputError(f"the ansatz needs p = 1 + 4/d = {1 + 4 / d}, got {profile.p}")
    if not 0 <= t < T:
        raise InvalidInputError(f"need 0 <= t < T, got t={t}, T={T}")
    r_in, r_out = cutoff_radii
    if not r_in > grid.obstacle.M:
        raise InvalidInputError(f"inner cutoff radius {r_in} must enclose the obstacle (M={grid.obstacle.M})")
    if not r_out > r_in:
        raise InvalidInputError("outer cutoff radius must exceed the inner one")
    tau = T - t
    x = grid.positions
    c = np.asarray(x0, dtype=float)
    rho2 = np.sum((x - c) ** 2, axis=1)
    psi = smoothstep((grid.radius - r_in) / (r_out - r_in))
    amp = tau ** (-d / 2) * profile(np.sqrt(rho2) / tau) * psi
    vals = amp * np.exp(1j * (4 - rho2) / (4 * tau))
    return ComplexField(grid, vals, time=float(t))
