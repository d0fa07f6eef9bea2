"""Obstacles, the truncated exterior grid and boundary quadrature.

The computational domain is the exterior of a convex obstacle (a ball or an
axis-aligned ellipsoid) intersected with the ball ``|x| < R_out``.  Nodes live
on the uniform lattice ``h * Z^d`` so that the grid is invariant under every
coordinate reflection whenever the obstacle is.

Boundary faces are the points where lattice lines cross the obstacle surface.
Each face remembers the fluid node it cuts, the fraction ``theta`` of the arm
that remains in the fluid, the unit normal (pointing out of the fluid, i.e.
into the obstacle) and a surface weight.  The weight of a crossing on a line
parallel to axis ``k`` is ``h**(d-1) * |n_k|**3 / sum_j n_j**4``: the partition
of unity ``n_k**4 / sum_j n_j**4`` makes the weights vanish on tangential
crossings, which keeps the quadrature second order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, InvalidInputError, ResolutionError

logger = logging.getLogger(__name__)

__all__ = [
    "NodeClass",
    "ObstacleSpec",
    "BoundaryFaces",
    "ExteriorGrid",
    "make_obstacle",
    "ball",
    "ellipsoid",
    "build_grid",
    "surface_integral",
]


class NodeClass(IntEnum):
    FLUID = 0
    OBSTACLE = 1
    BOUNDARY_ADJ = 2
    OUTER = 3


@dataclass(frozen=True)
class ObstacleSpec:
    """A ball or an axis-aligned ellipsoid.

    ``M`` and ``m`` are the largest and smallest distance from the origin to
    the obstacle surface; the origin must lie strictly inside the obstacle.
    """

    kind: str
    semi_axes: tuple[float, ...]
    center: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.semi_axes)

    @property
    def radius(self) -> float:
        if self.kind != "ball":
            raise InvalidInputError("radius is only defined for a ball")
        return self.semi_axes[0]

    @property
    def M(self) -> float:
        if self.kind == "ball":
            return self.semi_axes[0] + math.hypot(*self.center)
        return max(self.semi_axes)

    @property
    def m(self) -> float:
        if self.kind == "ball":
            return self.semi_axes[0] - math.hypot(*self.center)
        return min(self.semi_axes)

    @property
    def is_ball_like(self) -> bool:
        """True when the surface is a sphere centred at the origin (M == m)."""
        return self.M == self.m

    @property
    def reflection_invariant(self) -> bool:
        return all(c == 0.0 for c in self.center)

    def level(self, x: np.ndarray) -> np.ndarray:
        """Level-set function, negative inside the obstacle; x has shape (..., d)."""
        a = np.asarray(self.semi_axes)
        c = np.asarray(self.center)
        return np.sum(((x - c) / a) ** 2, axis=-1) - 1.0

    def normal(self, x: np.ndarray) -> np.ndarray:
        """Unit normal at surface points, pointing into the obstacle."""
        a = np.asarray(self.semi_axes)
        c = np.asarray(self.center)
        g = (x - c) / a**2
        return -g / np.linalg.norm(g, axis=-1, keepdims=True)

    def surface_measure(self) -> float:
        """Exact perimeter (d=2) or area (d=3) of the obstacle surface."""
        a = sorted(self.semi_axes, reverse=True)
        if self.dim == 2:
            from scipy.special import ellipe

            e2 = 1.0 - (a[1] / a[0]) ** 2
            return 4.0 * a[0] * ellipe(e2)
        if a[0] == a[1] == a[2]:
            return 4.0 * math.pi * a[0] ** 2
        from scipy.integrate import dblquad

        def integrand(phi, theta):
            st, ct = math.sin(theta), math.cos(theta)
            sp_, cp = math.sin(phi), math.cos(phi)
            x = (a[1] * a[2] * st**2 * cp) ** 2
            y = (a[0] * a[2] * st**2 * sp_) ** 2
            z = (a[0] * a[1] * st * ct) ** 2
            return math.sqrt(x + y + z)

        val, _ = dblquad(integrand, 0.0, math.pi, 0.0, 2.0 * math.pi)
        return val


def make_obstacle(kind, *, radius=None, semi_axes=None, dim=None, center=None) -> ObstacleSpec:
    """Build an :class:`ObstacleSpec` from user parameters.

    ``kind`` is ``"ball"`` (needs ``radius`` and ``dim``) or ``"ellipsoid"``
    (needs ``semi_axes``; the ellipsoid is centred at the origin).  A ball may
    be shifted by ``center`` as long as it still contains the origin.
    """
    if kind == "ball":
        if radius is None:
            raise InvalidInputError("a ball needs a radius")
        if dim is None:
            dim = len(center) if center is not None else 2
        if not radius > 0:
            raise InvalidInputError(f"ball radius must be positive, got {radius}")
        axes = (float(radius),) * dim
    elif kind == "ellipsoid":
        if semi_axes is None:
            raise InvalidInputError("an ellipsoid needs semi_axes")
        axes = tuple(float(a) for a in semi_axes)
        if dim is not None and dim != len(axes):
            raise InvalidInputError("dim does not match the number of semi-axes")
        if not all(a > 0 for a in axes):
            raise InvalidInputError(f"semi-axes must be positive, got {axes}")
        if center is not None and any(c != 0 for c in center):
            raise InvalidInputError("ellipsoids must be centred at the origin")
    else:
        raise InvalidInputError(f"unknown obstacle kind {kind!r}")
    d = len(axes)
    if d not in (2, 3):
        raise InvalidInputError(f"dimension must be 2 or 3, got {d}")
    c = tuple(float(v) for v in center) if center is not None else (0.0,) * d
    if len(c) != d:
        raise InvalidInputError("center has the wrong dimension")
    spec = ObstacleSpec(kind=kind, semi_axes=axes, center=c)
    if not spec.m > 0:
        raise InvalidInputError("the origin must lie strictly inside the obstacle")
    return spec


def ball(R: float, dim: int = 2, center=None) -> ObstacleSpec:
    return make_obstacle("ball", radius=R, dim=dim, center=center)


def ellipsoid(*semi_axes: float) -> ObstacleSpec:
    return make_obstacle("ellipsoid", semi_axes=semi_axes)


@dataclass(frozen=True)
class BoundaryFaces:
    """Crossings of lattice lines with the obstacle surface.

    Arrays are indexed by face.  ``axis``/``sign`` give the lattice direction
    ``sign * e_axis`` pointing from the fluid node ``node`` towards the
    surface point; ``theta`` is the remaining arm length in units of ``h``.
    ``line_nodes`` are fluid ids of the nodes at distances
    ``line_offsets * h`` from the surface point, moving away from it.
    """

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    axis: np.ndarray
    sign: np.ndarray
    theta: np.ndarray
    node: np.ndarray
    line_nodes: np.ndarray
    line_offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    @cached_property
    def _line_inverse(self) -> np.ndarray:
        # Rows of inv(V) give the coefficients of the cubic through the four
        # line nodes, in the distance (units of h) from the surface point.
        off = self.line_offsets
        V = off[:, :, None] ** np.arange(off.shape[1])[None, None, :]
        return np.linalg.inv(V)

    @property
    def slope_weights(self) -> np.ndarray:
        """Weights w with sum_j w_j u(line_nodes[j]) ~ h * d/ds u(x_b + s e) at s = 0.

        ``e = -sign * e_axis`` points from the surface into the fluid.  The
        cubic through the four line nodes is differentiated at the surface
        point.  The boundary value itself is not used, because the discrete
        solution's error has a kink inside the first (cut) cell.
        """
        return self._line_inverse[:, 1, :]

    @property
    def trace_weights(self) -> np.ndarray:
        """Weights extrapolating the line cubic to the surface point."""
        return self._line_inverse[:, 0, :]

    @cached_property
    def normal_along_axis(self) -> np.ndarray:
        """|n_k| for each face, k its lattice axis."""
        return np.abs(self.normals[np.arange(len(self.weights)), self.axis])

    @cached_property
    def x_dot_n(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.points, self.normals)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


@dataclass(eq=False)
class ExteriorGrid:
    """Uniform lattice discretisation of the truncated exterior domain.

    Field values are stored as 1-D arrays over the FLUID nodes, in the order
    of ``fluid_flat`` (row-major flat indices into the full lattice).
    """

    dim: int
    h: float
    R_out: float
    obstacle: ObstacleSpec
    half_width: int
    node_class: np.ndarray
    fluid_flat: np.ndarray
    fluid_id: np.ndarray
    faces: BoundaryFaces
    cut_theta: dict = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node_class.shape

    @property
    def n_fluid(self) -> int:
        return len(self.fluid_flat)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return self.h * np.arange(-self.half_width, self.half_width + 1)

    @cached_property
    def index(self) -> np.ndarray:
        """Lattice multi-indices (relative to the origin) of fluid nodes, shape (n, d)."""
        idx = np.unravel_index(self.fluid_flat, self.shape)
        return np.stack(idx, axis=1) - self.half_width

    @cached_property
    def positions(self) -> np.ndarray:
        return self.h * self.index.astype(float)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=1)

    @cached_property
    def reflection_invariant(self) -> bool:
        if not self.obstacle.reflection_invariant:
            return False
        cls = self.node_class
        return all(np.array_equal(cls, np.flip(cls, axis=k)) for k in range(self.dim))

    def reflection_permutation(self, axis: int) -> np.ndarray:
        """Fluid ids of the mirror images of every fluid node under x_axis -> -x_axis."""
        if not self.reflection_invariant:
            from .errors import SymmetryError

            raise SymmetryError("grid is not invariant under coordinate reflections")
        mirrored = np.flip(self.fluid_id, axis=axis)
        return mirrored.ravel()[self.fluid_flat]

    @cached_property
    def quadrant_weight(self) -> np.ndarray:
        """Weights restricting a node sum to the closed quadrant {x_j >= 0 for all j}.

        Nodes on a coordinate plane count with weight 1/2 per vanishing
        coordinate, so reflection-even integrands satisfy
        ``sum(f) == 2**d * sum(f * quadrant_weight)`` exactly.
        """
        idx = self.index
        w = np.where(idx < 0, 0.0, np.where(idx == 0, 0.5, 1.0))
        return np.prod(w, axis=1)

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return _assemble_laplacian(self)

    @cached_property
    def gradient(self) -> list[sp.csr_matrix]:
        return _assemble_gradient(self)

    @cached_property
    def wide_operators(self) -> tuple[sp.csr_matrix, list[sp.csr_matrix]]:
        """Fourth-order Laplacian and gradient where a five-point stencil fits.

        Rows whose stencil would cross the obstacle or leave the fluid keep
        the second-order cut-cell coefficients for that axis.
        """
        return _assemble_wide(self)

    def to_full(self, values: np.ndarray) -> np.ndarray:
        """Scatter fluid values into a full lattice array (zero off the fluid)."""
        full = np.zeros(int(np.prod(self.shape)), dtype=np.result_type(values, float))
        full[self.fluid_flat] = values
        return full.reshape(self.shape)

    def from_full(self, array: np.ndarray) -> np.ndarray:
        return np.asarray(array).reshape(-1)[self.fluid_flat]

    def node_fluid_id(self, multi_index) -> int:
        """Fluid id of the node with lattice indices ``multi_index`` (relative to 0)."""
        pos = tuple(int(i) + self.half_width for i in multi_index)
        return int(self.fluid_id[pos])


def build_grid(obstacle: ObstacleSpec, R_out: float, h: float) -> ExteriorGrid:
    """Discretise ``{x : x not in obstacle, |x| < R_out}`` with spacing ``h``."""
    if not h > 0:
        raise InvalidInputError(f"grid spacing must be positive, got {h}")
    if not R_out > 0:
        raise InvalidInputError(f"truncation radius must be positive, got {R_out}")
    d = obstacle.dim
    M, m = obstacle.M, obstacle.m
    if R_out <= M:
        raise GeometryError(f"R_out={R_out} does not enclose the obstacle (M={M})")
    if R_out <= 2 * M:
        raise GeometryError(f"R_out={R_out} must exceed 2*M={2 * M}")
    if h > m / 8:
        raise ResolutionError(f"h={h} does not resolve the obstacle (need h <= m/8 = {m / 8})")
    if R_out - M < 8 * h:
        raise ResolutionError("h too coarse to separate the obstacle from the truncation shell")

    N = int(math.ceil(R_out / h)) + 1
    ax = h * np.arange(-N, N + 1)
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
    r = np.linalg.norm(mesh, axis=-1)
    inside = obstacle.level(mesh) <= 0.0
    outer = (r >= R_out) & ~inside
    fluid = ~inside & ~outer

    node_class = np.full(fluid.shape, NodeClass.FLUID, dtype=np.int8)
    node_class[outer] = NodeClass.OUTER
    node_class[inside] = NodeClass.OBSTACLE
    adjacent = np.zeros_like(fluid)
    for k in range(d):
        adjacent |= _shift(fluid, k, +1) | _shift(fluid, k, -1)
    node_class[inside & adjacent] = NodeClass.BOUNDARY_ADJ

    fluid_flat = np.flatnonzero(fluid.ravel())
    fluid_id = np.full(fluid.shape, -1, dtype=np.int64)
    fluid_id.ravel()[fluid_flat] = np.arange(len(fluid_flat))

    faces, cut_theta = _find_faces(obstacle, mesh, fluid, fluid_id, h)
    grid = ExteriorGrid(
        dim=d,
        h=float(h),
        R_out=float(R_out),
        obstacle=obstacle,
        half_width=N,
        node_class=node_class,
        fluid_flat=fluid_flat,
        fluid_id=fluid_id,
        faces=faces,
        cut_theta=cut_theta,
    )
    logger.debug("built grid: %d fluid nodes, %d boundary faces", grid.n_fluid, len(faces))
    return grid


def _shift(a: np.ndarray, axis: int, s: int, fill=False) -> np.ndarray:
    """out[i] = a[i + s*e_axis], with ``fill`` beyond the array edge."""
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if s > 0:
        src[axis] = slice(s, None)
        dst[axis] = slice(None, -s)
    else:
        src[axis] = slice(None, s)
        dst[axis] = slice(-s, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _ray_hits(obstacle: ObstacleSpec, x: np.ndarray, k: int, s: int, h: float):
    """Smallest t in (0, h] with x + s t e_k on the surface, else NaN."""
    a = np.asarray(obstacle.semi_axes)
    c = np.asarray(obstacle.center)
    z = (x - c) / a
    A = np.sum(z**2, axis=1) - z[:, k] ** 2
    y = x[:, k] - c[k]
    disc = 1.0 - A
    t = np.full(len(x), np.nan)
    ok = disc >= 0.0
    r = a[k] * np.sqrt(np.where(ok, disc, 0.0))
    t1 = s * (r - y)
    t2 = s * (-r - y)
    tmin = np.minimum(t1, t2)
    hit = ok & (tmin > 0.0) & (tmin <= h * (1.0 + 1e-12))
    t[hit] = np.minimum(tmin[hit], h)
    return t


def _find_faces(obstacle, mesh, fluid, fluid_id, h):
    d = obstacle.dim
    shape = fluid.shape
    N = (shape[0] - 1) // 2
    reach = max(obstacle.semi_axes) + math.hypot(*obstacle.center) + 1.5 * h
    near = fluid & (np.linalg.norm(mesh, axis=-1) <= reach)
    cand = np.flatnonzero(near.ravel())
    xc = mesh.reshape(-1, d)[cand]
    cand_idx = np.stack(np.unravel_index(cand, shape), axis=1)

    parts = {key: [] for key in ("points", "normals", "weights", "axis", "sign", "theta", "node", "line_nodes", "line_offsets")}
    cut_theta = {}
    for k in range(d):
        for s in (+1, -1):
            t = _ray_hits(obstacle, xc, k, s, h)
            hit = ~np.isnan(t)
            theta_full = np.full(shape, np.nan)
            theta_full.ravel()[cand[hit]] = t[hit] / h
            cut_theta[(k, s)] = theta_full
            if not hit.any():
                continue
            pts = xc[hit].copy()
            pts[:, k] += s * t[hit]
            nrm = obstacle.normal(pts)
            nk = np.abs(nrm[:, k])
            w = h ** (d - 1) * nk**3 / np.sum(nrm**4, axis=1)
            base = cand_idx[hit]
            lines = np.full((len(pts), 4), -1, dtype=np.int64)
            for j in range(4):
                idx = base.copy()
                idx[:, k] -= s * j
                inb = np.all((idx >= 0) & (idx <= 2 * N), axis=1)
                ids = np.full(len(idx), -1, dtype=np.int64)
                ids[inb] = fluid_id[tuple(idx[inb].T)]
                lines[:, j] = ids
            theta = t[hit] / h
            parts["points"].append(pts)
            parts["normals"].append(nrm)
            parts["weights"].append(w)
            parts["axis"].append(np.full(len(pts), k))
            parts["sign"].append(np.full(len(pts), s))
            parts["theta"].append(theta)
            parts["node"].append(fluid_id[tuple(base.T)])
            parts["line_nodes"].append(lines)
            parts["line_offsets"].append(theta[:, None] + np.arange(4)[None, :])
    arrays = {}
    for key, chunks in parts.items():
        arrays[key] = np.concatenate(chunks) if chunks else np.zeros((0,))
    if np.any(arrays["line_nodes"] < 0):
        raise ResolutionError("boundary faces lack four fluid nodes along their lattice line")
    return BoundaryFaces(**arrays), cut_theta


def _neighbour_data(grid: ExteriorGrid, k: int, s: int):
    """Per fluid node: neighbour fluid id (or -1) and cut arm fraction (or NaN)."""
    nbr = _shift(grid.fluid_id, k, s, fill=-1)
    theta = grid.cut_theta[(k, s)]
    return grid.from_full(nbr), grid.from_full(theta)


def _assemble_laplacian(grid: ExteriorGrid) -> sp.csr_matrix:
    """Symmetric cut-cell Dirichlet Laplacian on the fluid nodes.

    Each lattice edge contributes the flux (u_j - u_i) / h**2.  An arm cut by
    the obstacle at fraction theta contributes -u_i / (theta h**2), the flux
    towards the boundary value 0.  The matrix is symmetric, so Crank-Nicolson
    conserves the discrete mass exactly.
    """
    n = grid.n_fluid
    h2 = grid.h**2
    diag = np.zeros(n)
    rows, cols = [], []
    ids = np.arange(n)
    for k in range(grid.dim):
        for s in (+1, -1):
            nbr, theta = _neighbour_data(grid, k, s)
            cut = ~np.isnan(theta)
            diag[cut] -= 1.0 / (theta[cut] * h2)
            link = ~cut & (nbr >= 0)
            diag[~cut] -= 1.0 / h2
            rows.append(ids[link])
            cols.append(nbr[link])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    off = sp.coo_matrix((np.full(len(rows), 1.0 / h2), (rows, cols)), shape=(n, n))
    return (off + sp.diags(diag)).tocsr()


def _assemble_gradient(grid: ExteriorGrid) -> list[sp.csr_matrix]:
    """Second-order nodal derivative matrices, one per axis.

    Interior nodes use central differences; at a cut arm the three-point
    formula on the unequal stencil (boundary point, node, opposite neighbour)
    is used with the boundary value 0.
    """
    n = grid.n_fluid
    h = grid.h
    ids = np.arange(n)
    mats = []
    for k in range(grid.dim):
        nb_p, th_p = _neighbour_data(grid, k, +1)
        nb_m, th_m = _neighbour_data(grid, k, -1)
        ap = np.where(np.isnan(th_p), 1.0, th_p)
        am = np.where(np.isnan(th_m), 1.0, th_m)
        D = ap * am * (ap + am) * h
        c_plus = am**2 / D
        c_minus = -(ap**2) / D
        c_self = (ap**2 - am**2) / D
        use_p = np.isnan(th_p) & (nb_p >= 0)
        use_m = np.isnan(th_m) & (nb_m >= 0)
        rows = np.concatenate([ids, ids[use_p], ids[use_m]])
        cols = np.concatenate([ids, nb_p[use_p], nb_m[use_m]])
        vals = np.concatenate([c_self, c_plus[use_p], c_minus[use_m]])
        mats.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return mats


def _assemble_wide(grid: ExteriorGrid):
    n = grid.n_fluid
    h = grid.h
    ids = np.arange(n)
    lap = sp.csr_matrix((n, n))
    grads = []
    for k in range(grid.dim):
        nb = {}
        for s in (1, 2, -1, -2):
            nb[s] = grid.from_full(_shift(grid.fluid_id, k, s, fill=-1))
        th_p = grid.from_full(grid.cut_theta[(k, +1)])
        th_m = grid.from_full(grid.cut_theta[(k, -1)])
        full = np.all([nb[s] >= 0 for s in nb], axis=0) & np.isnan(th_p) & np.isnan(th_m)
        # the outer arms must not be cut either
        full[full] &= np.isnan(th_p[nb[1][full]]) & np.isnan(th_m[nb[-1][full]])

        # second-order rows for this axis
        lap_rows, lap_cols, lap_vals = [ids], [ids], [np.zeros(n)]
        for s, th in ((1, th_p), (-1, th_m)):
            cut = ~np.isnan(th)
            lap_vals[0][cut] -= 1.0 / (th[cut] * h * h)
            lap_vals[0][~cut] -= 1.0 / (h * h)
            link = ~cut & (nb[s] >= 0) & ~full
            lap_rows.append(ids[link])
            lap_cols.append(nb[s][link])
            lap_vals.append(np.full(link.sum(), 1.0 / (h * h)))
        lap_vals[0][full] = -30.0 / (12 * h * h)
        for s, c in ((1, 16.0), (-1, 16.0), (2, -1.0), (-2, -1.0)):
            lap_rows.append(ids[full])
            lap_cols.append(nb[s][full])
            lap_vals.append(np.full(full.sum(), c / (12 * h * h)))
        lap = lap + sp.csr_matrix(
            (np.concatenate(lap_vals), (np.concatenate(lap_rows), np.concatenate(lap_cols))), shape=(n, n)
        )

        g2 = grid.gradient[k].tocoo()
        keep = ~full[g2.row]
        rows, cols, vals = [g2.row[keep]], [g2.col[keep]], [g2.data[keep]]
        for s, c in ((1, 8.0), (-1, -8.0), (2, -1.0), (-2, 1.0)):
            rows.append(ids[full])
            cols.append(nb[s][full])
            vals.append(np.full(full.sum(), c / (12 * h)))
        grads.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)))
    return lap.tocsr(), grads


def surface_integral(grid: ExteriorGrid, face_values, region: str = "all") -> float:
    """Quadrature of per-face values over the obstacle surface.

    ``region="quadrant"`` restricts to faces in the closed quadrant
    ``{x_j >= 0}``, with weight 1/2 per coordinate that vanishes.
    """
    vals = np.asarray(face_values)
    faces = grid.faces
    if vals.shape[0] != len(faces):
        raise InvalidInputError(f"expected {len(faces)} face values, got {vals.shape[0]}")
    w = faces.weights
    if region == "quadrant":
        w = w * face_quadrant_weight(grid)
    elif region != "all":
        raise InvalidInputError(f"unknown region {region!r}")
    return float(np.sum(vals * w))


def face_quadrant_weight(grid: ExteriorGrid) -> np.ndarray:
    pts = grid.faces.points
    tol = 1e-12 * grid.h
    w = np.where(pts < -tol, 0.0, np.where(np.abs(pts) <= tol, 0.5, 1.0))
    return np.prod(w, axis=1)
