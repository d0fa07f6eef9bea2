import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exterior_nls import evolution as evo
from exterior_nls import field as fld
from exterior_nls.errors import InvalidInputError
from exterior_nls.field import ComplexField, SymmetryClass
from exterior_nls.geometry import ball, build_grid


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.sampled_from([1.5, 2.0, 3.0]))
def test_divided_power(a, b, q):
    got = evo._divided_power(np.array([a]), np.array([b]), q)[0]
    if abs(a - b) > 1e-3 * max(a, b, 1e-300):
        expected = (a**q - b**q) / (a - b)
    else:
        expected = q * max(a, b) ** (q - 1)
    assert got == pytest.approx(expected, rel=1e-2 if abs(a - b) <= 1e-3 * max(a, b, 1e-300) else 1e-9, abs=1e-12)


def test_nonlinear_average_limit():
    v = np.array([0.3 + 0.4j, -1.0j, 0.0])
    assert np.allclose(evo.nonlinear_average(v, v, 3.0), np.abs(v) ** 2 * v)
    assert np.allclose(evo.nonlinear_average(v, v, 5.0), np.abs(v) ** 4 * v)


def free_gaussian(grid, s, t, center):
    """Exact free evolution of exp(-|x-c|^2 / (4 s)) in two dimensions."""
    z = s + 1j * t
    rho2 = np.sum((grid.positions - np.asarray(center)) ** 2, axis=1)
    return (s / z) * np.exp(-rho2 / (4 * z))


def test_linear_flow_matches_free_solution():
    errs = []
    for h, dt in ((1 / 16, 2e-3), (1 / 32, 1e-3)):
        g = build_grid(ball(1.0), 5.0, h)
        u = ComplexField(g, free_gaussian(g, 0.03, 0.0, (2.5, 0.0)))
        stepper = evo.Stepper(g, None)
        for _ in range(int(round(0.02 / dt))):
            u = stepper.step(u, dt)
        errs.append(np.max(np.abs(u.values - free_gaussian(g, 0.03, 0.02, (2.5, 0.0)))))
    assert errs[1] < 0.05
    assert errs[0] / errs[1] > 3.5


def test_nonlinear_step_conserves(disc):
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.5, 2.0, momentum=(1.0, 0.0))
    stepper = evo.Stepper(disc, 3.0)
    m0, e0 = fld.mass(u), fld.energy(u, 3.0)
    for _ in range(20):
        u = stepper.step(u, 5e-3)
    assert abs(fld.mass(u) - m0) < 1e-12 * m0
    assert abs(fld.energy(u, 3.0) - e0) < 1e-10 * (abs(e0) + 1)
    assert u.time == pytest.approx(0.1)


def test_second_order_in_time(disc):
    # stiff cut-cell modes need small steps before the rate shows
    u0 = fld.gaussian_bump(disc, (2.2, 0.5), 0.4, 1.5)
    finals = []
    for n in (40, 80, 160):
        stepper = evo.Stepper(disc, 3.0)
        u = u0
        for _ in range(n):
            u = stepper.step(u, 0.02 / n)
        finals.append(u.values)
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert 3.3 < ratio < 4.5


def test_iterative_solver_agrees(disc):
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.5, 1.0)
    a = evo.Stepper(disc, 3.0, solver="direct").step(u, 1e-2)
    b = evo.Stepper(disc, 3.0, solver="iterative").step(u, 1e-2)
    assert np.max(np.abs(a.values - b.values)) < 1e-9


def test_step_rejects(disc, fine_disc):
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.5)
    with pytest.raises(InvalidInputError):
        evo.Stepper(fine_disc, 3.0).step(u, 1e-3)
    with pytest.raises(InvalidInputError):
        evo.step(u, 0.0, 3.0)
    with pytest.raises(InvalidInputError):
        evo.Stepper(disc, 1.0)


def test_stalled_iteration_raises(disc):
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.3, 30.0)
    with pytest.raises(evo.StepFailure):
        evo.Stepper(disc, 5.0).step(u, 0.05)


def test_run_records_and_conserves(disc):
    u = fld.symmetrize(fld.gaussian_bump(disc, (1.8, 1.4), 0.4, 1.0), SymmetryClass.full(2))
    series, verdict = evo.run(u, 0.1, 5e-3, 3.0, record_every=2, annulus_width=0.5, annulus_tol=1e-2)
    assert verdict.status == evo.COMPLETED
    assert series.columns == evo.diagnostics_columns(2)
    assert len(series) == 11
    assert np.allclose(np.diff(series.times), 0.01)
    m, e = series.column("mass"), series.column("energy")
    assert np.max(np.abs(m - m[0])) < 1e-8 * m[0]
    assert np.max(np.abs(e - e[0])) < 1e-6 * (abs(e[0]) + 1)
    assert series.final.time == pytest.approx(0.1)


def test_run_halves_step(disc):
    u = fld.symmetrize(fld.gaussian_bump(disc, (2.0, 1.5), 0.5, 40.0), SymmetryClass.full(2))
    series, verdict = evo.run(u, 0.02, 0.02, 5.0, dt_min=1e-6, annulus_width=0.5)
    assert series.meta["dt_final"] < 0.02
    assert series.meta["steps"] > 1


def test_run_argument_checks(disc):
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.5)
    for kwargs in (dict(t_end=0.0, dt=0.1), dict(t_end=0.1, dt=0.0), dict(t_end=0.1, dt=0.03)):
        with pytest.raises(InvalidInputError):
            evo.run(u, p=3.0, **kwargs)
    with pytest.raises(InvalidInputError):
        evo.run(u, 0.1, 0.01, 3.0, record_every=0)


def synthetic(grad, annulus, meta=None):
    s = evo.DiagnosticsSeries(d=2, p=3.0, C=2.0, columns=evo.diagnostics_columns(2))
    for i, (g, a) in enumerate(zip(grad, annulus)):
        row = dict.fromkeys(s.columns, 0.0)
        row.update(t=0.1 * i, grad_sq=g, annulus_mass=a, mass=1.0)
        s.rows.append([row[c] for c in s.columns])
    s.meta.update(meta or {})
    return s


def test_detect_blowup_classification():
    v = evo.detect_blowup(synthetic([1, 4, 120], [0, 0, 0]))
    assert v.status == evo.BLOWUP_DETECTED and v.t_detect == pytest.approx(0.2)
    assert v.growth_factor == pytest.approx(math.sqrt(120))
    v = evo.detect_blowup(synthetic([1, 4, 120], [0, 1e-3, 1e-3]))
    assert v.status == evo.TRUNCATION_CONTAMINATED and v.t_detect == pytest.approx(0.1)
    v = evo.detect_blowup(synthetic([1, 2, 3], [0, 0, 0]))
    assert v.status == evo.COMPLETED and v.t_detect is None
    v = evo.detect_blowup(synthetic([1, 2, 3], [0, 0, 0], {"step_collapsed": True}))
    assert v.status == evo.BLOWUP_DETECTED and v.reason == "time step collapsed"
    with pytest.raises(InvalidInputError):
        evo.detect_blowup(synthetic([], []))


def test_csv_round_trip(tmp_path, disc):
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.5)
    series, _ = evo.run(u, 0.02, 0.01, 3.0)
    text = series.to_csv(tmp_path / "s.csv")
    assert text.splitlines()[0] == ",".join(evo.diagnostics_columns(2))
    back = evo.DiagnosticsSeries.from_csv(tmp_path / "s.csv", 2, 3.0, series.C)
    assert back.rows == series.rows
    assert back.to_csv() == text


def test_record_times_increase(disc):
    s = evo.DiagnosticsSeries.for_grid(disc, 3.0)
    u = fld.gaussian_bump(disc, (2.0, 0.5), 0.5)
    s.record(u)
    with pytest.raises(InvalidInputError):
        s.record(u)
