import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from exterior_nls.errors import GeometryError, InvalidInputError, ResolutionError, SymmetryError
from exterior_nls.geometry import NodeClass, ball, build_grid, ellipsoid, make_obstacle, surface_integral


def test_ball_distances():
    ob = ball(2.0)
    assert ob.M == ob.m == 2.0
    assert ob.is_ball_like and ob.reflection_invariant
    shifted = ball(1.0, center=(0.25, 0.0))
    assert shifted.M == pytest.approx(1.25) and shifted.m == pytest.approx(0.75)
    assert not shifted.reflection_invariant


def test_ellipsoid_distances_and_perimeter():
    ob = ellipsoid(2.0, 1.0)
    assert (ob.M, ob.m) == (2.0, 1.0)
    # Ramanujan's second approximation is accurate to ~1e-5 at this eccentricity
    a, b = 2.0, 1.0
    lam = ((a - b) / (a + b)) ** 2
    ramanujan = math.pi * (a + b) * (1 + 3 * lam / (10 + math.sqrt(4 - 3 * lam)))
    assert ob.surface_measure() == pytest.approx(ramanujan, rel=1e-5)
    assert ball(1.0, dim=3).surface_measure() == pytest.approx(4 * math.pi)
    assert ellipsoid(1.0, 1.0, 1.0).surface_measure() == pytest.approx(4 * math.pi, rel=1e-8)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="ball", radius=-1.0, dim=2),
        dict(kind="ball", radius=1.0, dim=4),
        dict(kind="ball", radius=1.0, center=(1.5, 0.0)),
        dict(kind="ellipsoid", semi_axes=(1.0, 0.0)),
        dict(kind="cube", radius=1.0),
    ],
)
def test_bad_obstacles(kwargs):
    kind = kwargs.pop("kind")
    with pytest.raises(InvalidInputError):
        make_obstacle(kind, **kwargs)


def test_grid_preconditions():
    with pytest.raises(InvalidInputError):
        build_grid(ball(1.0), 4.0, 0.0)
    with pytest.raises(ResolutionError):
        build_grid(ball(1.0), 4.0, 0.2)
    with pytest.raises(GeometryError):
        build_grid(ball(1.0), 1.8, 1 / 8)
    # the resolution bound is not strict
    assert build_grid(ball(1.0), 4.0, 1 / 8).n_fluid > 0


def test_node_classes(disc):
    cls = disc.node_class
    pos = disc.h * (np.indices(cls.shape).reshape(2, -1).T - disc.half_width)
    r = np.linalg.norm(pos, axis=1).reshape(cls.shape)
    assert np.all(r[cls == NodeClass.FLUID] > 1.0)
    assert np.all(r[cls == NodeClass.FLUID] < 4.0)
    assert np.all(r[cls == NodeClass.OBSTACLE] <= 1.0)
    assert np.any(cls == NodeClass.BOUNDARY_ADJ)


def test_laplacian_symmetric_negative(disc):
    L = disc.laplacian
    assert abs(L - L.T).max() < 1e-12
    top = spla.eigsh(L.tocsc(), k=1, which="LA", return_eigenvectors=False)[0]
    assert top < 0


def _manufactured_error(h):
    grid = build_grid(ball(1.0), 5.0, h)
    x, r = grid.positions, grid.radius
    g = np.sin(4 * (r - 1)) * np.exp(-((r - 1) ** 2))
    s = r - 1
    dg = np.exp(-s * s) * (4 * np.cos(4 * s) - 2 * s * np.sin(4 * s))
    d2g = np.exp(-s * s) * (-16 * np.sin(4 * s) - 16 * s * np.cos(4 * s) + (4 * s * s - 2) * np.sin(4 * s))
    ang = x[:, 0] * x[:, 1] / r**2
    exact = ang * g
    lap = ang * (d2g + dg / r - 4 * g / r**2)
    A = (grid.laplacian - sp.identity(grid.n_fluid)).tocsc()
    u = spla.spsolve(A, lap - exact)
    return np.max(np.abs(u - exact))


def test_laplacian_second_order_solution():
    e1, e2 = _manufactured_error(1 / 16), _manufactured_error(1 / 32)
    assert e2 < 1e-2
    assert math.log2(e1 / e2) > 1.8


def test_face_quadrature_perimeter():
    errs = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        g = build_grid(ball(1.0), 3.0, h)
        errs.append(abs(surface_integral(g, np.ones(len(g.faces))) - 2 * math.pi))
    assert errs[-1] < 1e-3
    assert errs[1] / errs[2] > 3


def test_faces_geometry(disc):
    f = disc.faces
    assert np.allclose(np.linalg.norm(f.points, axis=1), 1.0, atol=1e-12)
    assert np.allclose(f.x_dot_n, -1.0, atol=1e-12)
    assert np.all((f.theta > 0) & (f.theta <= 1))
    # the line cubic reproduces cubics exactly
    s = f.line_offsets
    assert np.allclose(np.einsum("fj,fj->f", f.slope_weights, 2 + 3 * s - s**3), 3.0)


def test_ellipse_faces(ellipse):
    f = ellipse.faces
    ob = ellipse.obstacle
    assert np.allclose(ob.level(f.points), 0.0, atol=1e-12)
    assert np.all(f.x_dot_n < 0)
    assert surface_integral(ellipse, np.ones(len(f))) == pytest.approx(ob.surface_measure(), rel=2e-3)


def test_reflections(disc):
    for axis in range(2):
        perm = disc.reflection_permutation(axis)
        assert np.array_equal(perm[perm], np.arange(disc.n_fluid))
        mirrored = disc.positions[perm]
        flipped = disc.positions.copy()
        flipped[:, axis] *= -1
        assert np.array_equal(mirrored, flipped)


def test_shifted_ball_not_reflection_invariant():
    g = build_grid(ball(1.0, center=(0.1, 0.0)), 4.0, 0.1)
    assert not g.reflection_invariant
    with pytest.raises(SymmetryError):
        g.reflection_permutation(0)


def test_quadrant_weight_exact(disc, rng):
    f = rng.normal(size=disc.n_fluid)
    even = f + f[disc.reflection_permutation(0)]
    even = even + even[disc.reflection_permutation(1)]
    assert np.sum(even) == pytest.approx(4 * np.sum(even * disc.quadrant_weight), rel=1e-13)


def test_ball3_grid(ball3):
    assert ball3.dim == 3
    area = surface_integral(ball3, np.ones(len(ball3.faces)))
    assert area == pytest.approx(4 * math.pi, rel=2e-2)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.8, 1.6), st.floats(0.8, 1.6))
def test_face_normals_point_into_obstacle(a, b):
    ob = ellipsoid(a, b)
    g = build_grid(ob, 2.5 * ob.M + 0.5, ob.m / 8)
    f = g.faces
    assert np.allclose(np.linalg.norm(f.normals, axis=1), 1.0)
    assert np.all(f.x_dot_n < 0)
    assert np.all(f.weights >= 0)
