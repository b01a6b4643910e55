import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import coulomb_system, coulomb_transform, flat, identity_transform
from dktransform import (
    DomainExit,
    EnergyMismatch,
    IntegratorConfig,
    NonPositiveTimeScale,
    SystemSpec,
    Trajectory,
    TransformSpec,
    auto_conformal_exponent,
    correspondence_check,
    equations_of_motion,
    expression_map,
    integrate,
    pseudotime_map,
    scalar_map,
)
from dktransform.classical import CSV_VERSION, _Segment

REFLECT = IntegratorConfig(walls="reflect")
RADIAL_PERIOD = 16 * np.pi  # 2 pi / (-2E)^(3/2) at E = -1/8


def coulomb():
    # the regularized orbit bounces at the collision point q = 0
    return coulomb_system(q_min=0.0)


def oscillator(k=1.0, mass=1.0, box=5.0):
    return SystemSpec(flat(1), scalar_map(f"{k / 2}*q1^2", ["q1"]), mass=mass, domain=((-box, box),))


def free(dim):
    names = [f"q{i + 1}" for i in range(dim)]
    return SystemSpec(flat(dim), scalar_map("0", names), mass=1.7)


def analytic_trajectory(fn, s_end, samples=401):
    """Final-frame trajectory whose dense output is an exact function of ``s``."""
    s = np.linspace(0.0, s_end, samples)

    def evaluate(ss):
        Q, dQ = fn(np.asarray(ss, dtype=float))
        return np.stack([Q, dQ], axis=-1)

    y = evaluate(s)
    seg = _Segment(0.0, s_end, evaluate, np.linspace(0.0, s_end, 201))
    return Trajectory("final-s", s, y[:, :1], y[:, 1:], np.zeros(samples), [seg])


# -- equations of motion ------------------------------------------------------------------


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_free_particle_has_no_acceleration(dim, rng):
    a = equations_of_motion(free(dim), rng.normal(size=dim), rng.normal(size=dim))
    assert np.allclose(a, 0.0, atol=1e-15)


@given(q=st.floats(-3, 3), v=st.floats(-3, 3), k=st.floats(0.1, 5), m=st.floats(0.2, 4))
def test_hooke_law(q, v, k, m):
    a = equations_of_motion(oscillator(k, m), [q], [v])
    assert a[0] == pytest.approx(-k / m * q, rel=1e-12, abs=1e-14)


def test_larmor_circle():
    B, m = 1.3, 0.8
    sys = SystemSpec(
        flat(2),
        scalar_map("0", ["q1", "q2"]),
        vector_potential=expression_map([f"-{B / 2}*q2", f"{B / 2}*q1"], ["q1", "q2"]),
        mass=m,
    )
    x0, v0 = np.array([0.3, -0.2]), np.array([0.5, 0.9])
    w = B / m
    t = 7.0
    tj = integrate(sys, x0, v0, t)
    c, s = np.cos(w * t), np.sin(w * t)
    x = x0 + np.array([v0[0] * s - v0[1] * (c - 1), v0[0] * (c - 1) + v0[1] * s]) / w
    v = np.array([v0[0] * c + v0[1] * s, -v0[0] * s + v0[1] * c])
    assert np.allclose(tj.points[-1], x, atol=1e-9)
    assert np.allclose(tj.velocities[-1], v, atol=1e-9)
    assert tj.energy_drift < 1e-9


def test_curved_metric_geodesic_keeps_speed():
    # geodesics have constant kinetic energy; sphere in (theta, phi) coordinates
    names = ["q1", "q2"]
    from dktransform import MetricField

    sphere = SystemSpec(MetricField(expression_map([["1", "0"], ["0", "sin(q1)^2"]], names)), scalar_map("0", names))
    tj = integrate(sphere, [1.0, 0.0], [0.2, 0.7], 10.0)
    assert tj.energy_drift < 1e-9


# -- integration -----------------------------------------------------------------------------


@pytest.mark.parametrize("k, m", [(1.0, 1.0), (2.5, 0.7)])
def test_oscillator_returns_after_one_period(k, m):
    period = 2 * np.pi * np.sqrt(m / k)
    tj = integrate(oscillator(k, m), [1.0], [0.3], period)
    assert np.allclose(tj.points[-1], [1.0], atol=1e-8)
    assert np.allclose(tj.velocities[-1], [0.3], atol=1e-8)


def test_free_particle_is_a_straight_line():
    x0, v0 = np.array([0.1, -0.4, 1.0]), np.array([0.3, 0.2, -0.5])
    tj = integrate(free(3), x0, v0, 4.0)
    assert np.allclose(tj.points, x0 + tj.times[:, None] * v0, atol=1e-12)


def test_kepler_like_radial_orbit_is_bounded():
    sys = SystemSpec(flat(1), scalar_map("-1/q1 + 0.5/q1^2", ["q1"]), domain=((0.01, 50.0),))
    q0 = 0.7
    energy = -1 / q0 + 0.5 / q0**2
    period = 2 * np.pi / (-2 * energy) ** 1.5
    tj = integrate(sys, [q0], [0.0], 5 * period)
    assert tj.energy_drift < 1e-8
    assert tj.points.min() > 0.5 and tj.points.max() < 2.0


def test_dense_output_matches_samples():
    tj = integrate(oscillator(), [1.0], [0.0], 3.0)
    x, v = tj.dense(tj.times)
    assert np.allclose(x, tj.points, atol=1e-14)
    assert np.allclose(np.cos(tj.times), tj.points[:, 0], atol=1e-9)


def test_leaving_the_box_raises_with_partial_trajectory():
    with pytest.raises(DomainExit) as info:
        integrate(coulomb_system(), [8.0], [0.0], RADIAL_PERIOD)
    partial = info.value.trajectory
    assert partial is not None and partial.points[-1, 0] < 1e-3


def test_reflecting_wall_only_in_one_dimension():
    with pytest.raises(ValueError):
        integrate(free(2), [0.0, 0.0], [1.0, 0.0], 1.0, REFLECT)


def test_reflection_keeps_the_orbit_periodic():
    tj = integrate(coulomb(), [8.0], [0.0], RADIAL_PERIOD, REFLECT)
    assert tj.points[-1, 0] == pytest.approx(8.0, abs=1e-6)
    assert tj.points.max() <= 8.0 + 1e-6


def test_symplectic_method_conserves_energy():
    cfg = IntegratorConfig(method="fixed-step-symplectic", step=0.01)
    tj = integrate(oscillator(), [1.0], [0.3], 2 * np.pi, cfg)
    assert tj.energy_drift < 1e-9
    assert np.allclose(tj.points[-1], [1.0], atol=1e-7)


def test_csv_export(tmp_path):
    tj = integrate(oscillator(), [1.0], [0.0], 1.0, IntegratorConfig(samples=11))
    path = tmp_path / "traj.csv"
    tj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {CSV_VERSION} frame=initial-t"
    assert lines[1] == "t,x1,v1,energy"
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    assert data.shape == (11, 4)
    assert np.array_equal(data[:, 1], tj.points[:, 0])


def test_invalid_config_is_rejected():
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0.0)


# -- pseudotime ------------------------------------------------------------------------------


def test_unit_time_scale_gives_identity_clock():
    tr = identity_transform(1)
    tj = analytic_trajectory(lambda s: (np.sin(s), np.cos(s)), 3.0)
    ptm = pseudotime_map(tr, tj)
    assert np.allclose(ptm.t, tj.times, atol=1e-14)


def test_constant_orbit_gives_linear_clock():
    tr = coulomb_transform()
    Q0 = 1.3
    tj = analytic_trajectory(lambda s: (np.full_like(s, Q0), np.zeros_like(s)), 2.0)
    assert np.allclose(pseudotime_map(tr, tj).t, 4 * Q0**2 * tj.times, rtol=1e-13)


@pytest.mark.parametrize("w", [0.5, 1.0, 3.0])
def test_oscillating_orbit_clock(w):
    tr = coulomb_transform()
    tj = analytic_trajectory(lambda s: (np.cos(w * s), -w * np.sin(w * s)), 5.0)
    ptm = pseudotime_map(tr, tj)
    exact = 2 * tj.times + np.sin(2 * w * tj.times) / w
    assert np.allclose(ptm.t, exact, atol=1e-11)
    s = np.array([0.123, 2.7, 4.999])
    assert np.allclose(ptm(s), 2 * s + np.sin(2 * w * s) / w, atol=1e-11)


def test_clock_from_samples_only():
    tr = coulomb_transform()
    s = np.linspace(0.0, 5.0, 2001)
    tj = Trajectory("final-s", s, np.cos(s)[:, None], -np.sin(s)[:, None], np.zeros_like(s))
    ptm = pseudotime_map(tr, tj)
    assert np.allclose(ptm.t, 2 * s + np.sin(2 * s), atol=1e-9)


def test_clock_derivative_recovers_time_scale():
    sys = SystemSpec(flat(1), scalar_map("0.5*q1^2 - 4", ["q1"]), domain=((-10.0, 10.0),))
    tr = coulomb_transform()
    tj = integrate(sys, [1.0], [0.0], 6.0, IntegratorConfig(samples=4001), frame="final-s")
    ptm = pseudotime_map(tr, tj)
    assert np.all(np.diff(ptm.t) > 0)
    mid = 0.5 * (tj.times[1:] + tj.times[:-1])
    rate = np.diff(ptm.t) / np.diff(tj.times)
    Q_mid = tj.dense(mid)[0]
    assert np.allclose(rate, 4 * Q_mid[:, 0] ** 2, rtol=1e-5, atol=1e-6)


def test_non_positive_time_scale_is_rejected():
    tr = TransformSpec(expression_map(["Q1"], ["Q1"]), scalar_map("Q1", ["Q1"]))
    tj = analytic_trajectory(lambda s: (np.cos(s), -np.sin(s)), 3.0)
    with pytest.raises(NonPositiveTimeScale):
        pseudotime_map(tr, tj)


# -- correspondence -------------------------------------------------------------------------------


def test_identity_correspondence():
    sys = oscillator()
    r = correspondence_check(sys, identity_transform(1, energy=0.5), None, [1.0], [0.0], 10.0)
    assert r.error is None and r.deviation < 1e-9 and r.n_compared > 100


def test_pure_time_rescale_correspondence():
    sys = oscillator()
    r = correspondence_check(sys, identity_transform(1, energy=0.5, scale="2"), None, [1.0], [0.0], 10.0)
    assert r.deviation < 1e-9
    assert np.allclose(r.samples["t"], 2 * r.samples["s"], rtol=1e-12)


def test_coulomb_correspondence():
    r = correspondence_check(coulomb(), coulomb_transform(), None, [8.0], [0.0], RADIAL_PERIOD, REFLECT)
    assert r.error is None
    assert r.deviation < 1e-6
    assert r.energy_measured == pytest.approx(-0.125)
    assert r.pseudo_energy_drift < 1e-8


def test_velocities_satisfy_reparametrization():
    r = correspondence_check(coulomb(), coulomb_transform(), None, [8.0], [0.0], RADIAL_PERIOD, REFLECT)
    assert r.velocity_residual < 1e-6


def test_auto_exponent_selects_the_flat_oscillator():
    chosen, reports = auto_conformal_exponent(coulomb(), coulomb_transform(), [8.0], [0.0], RADIAL_PERIOD, REFLECT)
    assert chosen == -1
    assert reports[-1].passed() and not reports[1].passed()


def test_energy_mismatch():
    with pytest.raises(EnergyMismatch):
        correspondence_check(coulomb(), coulomb_transform(energy=-0.2), None, [8.0], [0.0], 1.0, REFLECT)


def test_correspondence_converges_as_tolerance_tightens():
    sys = oscillator()
    tr = identity_transform(1, energy=0.5, scale="1 + 0.5*Q1^2")
    devs = []
    for tol in (1e-6, 1e-8, 1e-10):
        cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol * 1e-2)
        devs.append(correspondence_check(sys, tr, None, [1.0], [0.0], 10.0, cfg).deviation)
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-8
