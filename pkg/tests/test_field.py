import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exterior_nls import field as fld
from exterior_nls.errors import InvalidInputError, SymmetryError
from exterior_nls.field import ComplexField, SymmetryClass
from exterior_nls.geometry import ball, build_grid
from exterior_nls.ground_state import solve_ground_state

FULL = SymmetryClass.full(2)


def random_field(grid, seed):
    g = np.random.default_rng(seed)
    return ComplexField(grid, g.normal(size=grid.n_fluid) + 1j * g.normal(size=grid.n_fluid))


def test_rejects_bad_values(disc):
    with pytest.raises(InvalidInputError):
        ComplexField(disc, np.zeros(3))
    bad = np.zeros(disc.n_fluid, complex)
    bad[0] = np.nan
    with pytest.raises(InvalidInputError):
        ComplexField(disc, bad)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * math.pi), st.integers(0, 2**16))
def test_phase_rotation_invariance(disc, theta, seed):
    u = random_field(disc, seed)
    v = u.scaled(np.exp(1j * theta))
    assert fld.mass(v) == pytest.approx(fld.mass(u), rel=1e-13)
    assert fld.energy(v, 3.0) == pytest.approx(fld.energy(u, 3.0), rel=1e-12, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_symmetrize_is_projection(disc, seed):
    u = random_field(disc, seed)
    once = fld.symmetrize(u, FULL)
    twice = fld.symmetrize(once, FULL)
    assert np.array_equal(once.values, twice.values)
    assert fld.antisymmetry_defect(once, FULL) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0), st.sampled_from([3.0, 5.0]))
def test_energy_scaling_polynomial(disc, lam, p):
    u = fld.symmetrize(fld.gaussian_bump(disc, (2.0, 1.5), 0.5), FULL)
    A, B = fld.grad_sq(u), fld.lp1_norm(u, p)
    expected = 0.5 * lam**2 * A - lam ** (p + 1) / (p + 1) * B
    assert fld.energy(u.scaled(lam), p) == pytest.approx(expected, rel=1e-11, abs=1e-11)


def test_partial_symmetry(disc):
    u = fld.symmetrize(random_field(disc, 1), SymmetryClass((0,)))
    assert fld.antisymmetry_defect(u, SymmetryClass((0,))) == 0.0
    assert fld.antisymmetry_defect(u, FULL) > 0.1
    with pytest.raises(InvalidInputError):
        fld.symmetrize(u, SymmetryClass((2,)))


def test_symmetry_needs_invariant_grid():
    g = build_grid(ball(1.0, center=(0.1, 0.0)), 4.0, 0.1)
    with pytest.raises(SymmetryError):
        fld.symmetrize(random_field(g, 0), FULL)


def test_gaussian_norms(fine_disc):
    w = 0.4
    u = fld.gaussian_bump(fine_disc, (2.5, 0.0), w, 1.0)
    assert fld.mass(u) == pytest.approx(math.pi * w**2, rel=1e-6)
    assert fld.lp1_norm(u, 3.0) == pytest.approx(math.pi * w**2 / 2, rel=1e-6)
    assert fld.grad_sq(u) == pytest.approx(math.pi, rel=1e-2)


def test_gradient_energy_second_order():
    errs = []
    for h in (1 / 8, 1 / 16):
        g = build_grid(ball(1.0), 4.0, h)
        errs.append(abs(fld.grad_sq(fld.gaussian_bump(g, (2.5, 0.0), 0.4)) - math.pi))
    assert errs[0] / errs[1] > 3.5


def test_boundary_gradient_of_radial_field():
    errs, traces = [], []
    for h in (1 / 16, 1 / 32):
        g = build_grid(ball(1.0), 3.0, h)
        r = g.radius
        u = ComplexField(g, (r**2 - 1) * np.exp(-(r**2)))
        ok = g.faces.normal_along_axis > 0.3
        exact = (2 * math.exp(-1)) ** 2
        errs.append(np.max(np.abs(fld.boundary_grad_sq(u)[ok] / exact - 1)))
        traces.append(np.max(np.abs(fld.boundary_trace(u))))
    assert errs[1] < 5e-3
    assert errs[0] / errs[1] > 5
    assert traces[0] / traces[1] > 10


def test_annulus_mass(disc):
    u = fld.ring_bump(disc, 3.5, 0.2)
    assert fld.annulus_mass(u) == pytest.approx(fld.mass(u), rel=1e-6)
    v = fld.gaussian_bump(disc, (1.5, 0.0), 0.1)
    assert fld.annulus_mass(v) < 1e-10 * fld.mass(v)


def test_clearance_ramp(disc):
    u = fld.gaussian_bump(disc, (1.2, 0.0), 0.5, clearance=(1.1, 1.6))
    assert np.all(u.values[disc.radius <= 1.1] == 0)
    assert fld.smoothstep(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])).tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]
    with pytest.raises(InvalidInputError):
        fld.gaussian_bump(disc, (1.2, 0.0), 0.5, clearance=(1.6, 1.1))


def test_ring_mode(disc):
    u = fld.ring_bump(disc, 2.0, 0.3, mode=2)
    x = disc.positions
    on_diag = np.isclose(np.abs(x[:, 0]), np.abs(x[:, 1]))
    assert np.max(np.abs(u.values[on_diag])) < 1e-12


def test_incoming_ring(disc):
    u = fld.incoming_ring(disc, 2.5, 0.4, 3.0, amplitude=0.7, symmetry=FULL)
    assert np.max(np.abs(u.values)) == pytest.approx(0.7, rel=0.05)
    assert fld.antisymmetry_defect(u, FULL) == 0.0
    # radial phase exp(-i k r): the packet moves inward
    from exterior_nls.virial import dt_upsilon2

    assert dt_upsilon2(u) < 0
    near = disc.radius < 1.0 + 1.5 * disc.h
    assert np.max(np.abs(u.values[near])) < 1e-3


def test_pseudoconformal_ansatz(disc):
    prof = solve_ground_state(2, 3.0)
    u = fld.pseudoconformal_ansatz(disc, prof, T=1.0, t=0.5, x0=(2.5, 0.0), cutoff_radii=(1.2, 1.6))
    assert np.all(u.values[disc.radius <= 1.2] == 0)
    k = disc.node_fluid_id((20, 0))
    expected = 0.5**-1 * prof(np.array([0.0]))[0] * np.exp(1j * 4 / 2)
    assert u.values[k] == pytest.approx(expected, rel=1e-12)
    assert u.time == 0.5
    with pytest.raises(InvalidInputError):
        fld.pseudoconformal_ansatz(disc, prof, T=1.0, t=1.0, x0=(2.5, 0.0), cutoff_radii=(1.2, 1.6))
    with pytest.raises(InvalidInputError):
        fld.pseudoconformal_ansatz(disc, prof, T=1.0, t=0.0, x0=(2.5, 0.0), cutoff_radii=(0.9, 1.6))
    with pytest.raises(InvalidInputError):
        fld.pseudoconformal_ansatz(disc, solve_ground_state(2, 5.0), T=1.0, t=0.0, x0=(2.5, 0.0), cutoff_radii=(1.2, 1.6))
