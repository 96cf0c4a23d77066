"""Tests for the monolithic backward-Euler fluid-beam stepper."""

import numpy as np
import pytest

from beamflow.coupled_linear import CoupledStepper, SourceBundle
from beamflow.discretization import MixedSpace, build_mesh
from beamflow.errors import CompatibilityViolation
from beamflow.fourier import PeriodicField

TWO_PI = 2.0 * np.pi
BEAM_LOAD_FACTOR = 1.0 + TWO_PI ** 4 - TWO_PI ** 2 + TWO_PI


def exact_velocity(points, t):
    """Divergence-free field whose circle trace is -exp(-t) cos(2 pi y) n."""
    x, y = points[:, 0], points[:, 1]
    return -np.exp(-t) * np.stack([(3.0 - x ** 2 - 3.0 * y ** 2) / 2.0,
                                   x * y], axis=1)


def exact_body_force(points, t):
    x, y = points[:, 0], points[:, 1]
    return np.exp(-t) * np.stack([(-5.0 - x ** 2 - 3.0 * y ** 2) / 2.0,
                                  x * y], axis=1)


def manufactured_bundle(stepper, t):
    g = np.zeros(stepper.n_beam)
    g[1] = np.exp(-t) * BEAM_LOAD_FACTOR
    return SourceBundle(bfh=exact_body_force(stepper.space.quad_points, t), g=g)


@pytest.fixture(scope="module")
def circle_stepper(circle_geo):
    mesh = build_mesh(circle_geo, 0.15)
    space = MixedSpace(circle_geo, mesh, beam_modes=8)
    return CoupledStepper(space)


def run_manufactured(stepper, dt, horizon):
    eta0 = np.zeros(stepper.n_beam)
    eta0[1] = 1.0
    w0 = np.zeros(stepper.n_beam)
    w0[1] = -1.0
    state = stepper.initial_state(eta=eta0, w=w0,
                                  u=lambda p: exact_velocity(p, 0.0))
    states, bundles = [state], []
    for k in range(1, int(round(horizon / dt)) + 1):
        bundle = manufactured_bundle(stepper, k * dt)
        bundle, _ = stepper.compatibility_project(bundle, states[-1])
        bundles.append(bundle)
        states.append(stepper.step(states[-1], bundle, dt))
    return states, bundles


def test_zero_data_gives_zero_state(circle_stepper):
    state = circle_stepper.initial_state()
    out = circle_stepper.step(state, SourceBundle(), 0.05)
    assert np.abs(out.u).max() == 0.0
    assert np.abs(out.w).max() == 0.0
    assert np.abs(out.pressure).max() == 0.0
    assert out.t == pytest.approx(0.05)


def test_initial_state_balances_flux(circle_stepper, rng):
    st = circle_stepper
    w = rng.standard_normal(st.n_beam)
    u = rng.standard_normal(st.space.n_velocity)
    state = st.initial_state(w=w, u=u)
    assert abs(st.flux_row @ state.u) < 1e-12
    assert st.interface_residual(state) == 0.0

    eta = PeriodicField.from_mode_list([(1, 0.2, -0.1), (3, 0.0, 0.05)])
    by_field = st.initial_state(eta=eta)
    vec = np.zeros(st.n_beam)
    vec[1], vec[st.k_max + 1] = 0.2, -0.1
    vec[3], vec[st.k_max + 3] = 0.0, 0.05
    by_vector = st.initial_state(eta=vec)
    assert np.allclose(by_field.eta, by_vector.eta, atol=1e-14)


def test_interface_condition_exact_after_steps(circle_stepper, rng):
    st = circle_stepper
    bundle = SourceBundle(
        bfh=rng.standard_normal((len(st.space.quad_points), 2)),
        g=rng.standard_normal(st.n_beam))
    state = st.initial_state(w=rng.standard_normal(st.n_beam))
    for _ in range(3):
        projected, _ = st.compatibility_project(bundle, state)
        state = st.step(state, projected, 0.04)
        assert st.interface_residual(state) <= 1e-12


def test_step_is_linear_in_sources(circle_stepper, rng):
    st = circle_stepper
    zero = st.initial_state()
    s1 = SourceBundle(bfh=rng.standard_normal((len(st.space.quad_points), 2)))
    s2 = SourceBundle(g=rng.standard_normal(st.n_beam))
    combined = SourceBundle(bfh=2.0 * s1.bfh, g=3.0 * s2.g)
    a = st.step(zero, s1, 0.05)
    b = st.step(zero, s2, 0.05)
    c = st.step(zero, combined, 0.05)
    scale = np.abs(c.u).max() + np.abs(c.w).max()
    assert np.abs(c.u - 2.0 * a.u - 3.0 * b.u).max() < 1e-10 * scale
    assert np.abs(c.w - 2.0 * a.w - 3.0 * b.w).max() < 1e-10 * scale
    assert np.abs(c.pressure - 2.0 * a.pressure
                  - 3.0 * b.pressure).max() < 1e-8


def test_energy_nonincreasing_source_free(circle_stepper, rng):
    st = circle_stepper
    for _ in range(5):
        state = st.initial_state(
            w=rng.standard_normal(st.n_beam),
            eta=rng.standard_normal(st.n_beam) * 0.3,
            u=rng.standard_normal(st.space.n_velocity))
        energy = st.energy(state)
        for _ in range(60):
            state = st.step(state, SourceBundle(), 0.01)
            new_energy = st.energy(state)
            assert new_energy <= energy + 1e-10 * max(1.0, energy)
            energy = new_energy


def test_energy_residual_matches_increments(circle_stepper, rng):
    """The identity defect equals minus the squared backward increments."""
    st = circle_stepper
    bundle = SourceBundle(
        bfh=rng.standard_normal((len(st.space.quad_points), 2)),
        g=0.5 * rng.standard_normal(st.n_beam))
    state = st.initial_state(w=rng.standard_normal(st.n_beam) * 0.2,
                             u=rng.standard_normal(st.space.n_velocity) * 0.2)
    states = [state]
    for _ in range(4):
        projected, _ = st.compatibility_project(bundle, states[-1])
        states.append(st.step(states[-1], projected, 0.03))
    ledger = st.energy_report(states, [bundle] * 4)
    for n in range(1, len(states)):
        du = states[n].u - states[n - 1].u
        dw = states[n].w - states[n - 1].w
        de = states[n].eta - states[n - 1].eta
        predicted = -0.5 * (du @ (st.ops.M @ du) + dw @ (st.mass_w * dw)
                            + de @ (st.bend_w * de))
        scale = 1.0 + abs(predicted)
        assert ledger.residual[n] == pytest.approx(predicted, abs=1e-9 * scale)
        assert ledger.residual[n] <= ledger.energy[n - 1] * 1e-10 + abs(
            ledger.work_f[n] + ledger.work_g[n]) * 0.2 + abs(predicted) * 1.5


def test_energy_residual_halves_with_dt(circle_stepper):
    sums = []
    for dt in (0.05, 0.025, 0.0125):
        states, bundles = run_manufactured(circle_stepper, dt, 0.5)
        ledger = circle_stepper.energy_report(states, bundles)
        sums.append(np.abs(ledger.residual[1:]).sum())
    assert 5.0 < sums[0] < 8.0
    for coarse, fine in zip(sums, sums[1:]):
        assert 1.8 < coarse / fine < 2.2


def test_manufactured_solution_first_order(circle_geo):
    mesh = build_mesh(circle_geo, 0.12)
    space = MixedSpace(circle_geo, mesh, beam_modes=6)
    stepper = CoupledStepper(space)
    horizon = 0.5
    errors = []
    for dt in (0.05, 0.025):
        states, _ = run_manufactured(stepper, dt, horizon)
        final = states[-1]
        exact = np.exp(-horizon)
        eta_err = abs(final.eta[1] - exact)
        other = np.abs(np.delete(final.eta, 1)).max()
        u_exact = space.interpolate_velocity(
            lambda p: exact_velocity(p, horizon))
        u_err = np.abs(final.u - u_exact).max()
        assert other < 1e-8
        assert abs(final.c_pi) < 1e-9
        errors.append((eta_err, u_err))
    assert errors[0][0] == pytest.approx(3.309e-4, rel=0.15)
    assert errors[0][1] == pytest.approx(2.435e-2, rel=0.15)
    assert np.log2(errors[0][0] / errors[1][0]) > 0.85
    assert np.log2(errors[0][1] / errors[1][1]) > 0.85


def test_pressure_split_identity(circle_stepper, rng):
    st = circle_stepper
    zero_split = st.pressure_split(st.initial_state())
    assert zero_split.c_pi == 0.0
    assert zero_split.residual == 0.0
    assert zero_split.denominator == pytest.approx(
        st.space.geometry.perimeter(), rel=1e-4)

    bundle = SourceBundle(
        bfh=rng.standard_normal((len(st.space.quad_points), 2)),
        g=rng.standard_normal(st.n_beam))
    state = st.initial_state(w=rng.standard_normal(st.n_beam) * 0.1)
    for _ in range(3):
        projected, _ = st.compatibility_project(bundle, state)
        state = st.step(state, projected, 0.02)
        split = st.pressure_split(state, projected)
        assert split.residual <= 1e-10
        mean = abs(st._mp_row @ split.pi0) / st._area
        assert mean <= 1e-12
        assert np.allclose(split.pi0 + split.c_pi, state.pressure)


def test_compatibility_projection(circle_stepper, rng):
    st = circle_stepper
    zero = st.initial_state()
    nq = len(st.space.quad_points)

    ones = SourceBundle(h=np.ones(nq))
    projected, shift = st.compatibility_project(ones, zero)
    assert shift == pytest.approx(-1.0, abs=1e-12)
    assert abs(st.source_imbalance(projected, zero)) < 1e-12

    compatible = SourceBundle(bfh=rng.standard_normal((nq, 2)))
    _, no_shift = st.compatibility_project(compatible, zero)
    assert no_shift == 0.0

    with pytest.raises(CompatibilityViolation):
        st.step(zero, ones, 0.05)

    random = SourceBundle(h=rng.standard_normal(nq))
    projected, _ = st.compatibility_project(random, zero)
    assert abs(st.source_imbalance(projected, zero)) < 1e-12
    stepped = st.step(zero, projected, 0.05)
    assert np.isfinite(stepped.u).all()


def test_input_validation(circle_stepper):
    st = circle_stepper
    state = st.initial_state()
    with pytest.raises(ValueError):
        st.step(state, SourceBundle(), 0.0)
    with pytest.raises(ValueError):
        st.initial_state(w=np.zeros(3))
    too_rich = PeriodicField.from_mode_list([(st.k_max + 1, 1.0, 0.0)])
    with pytest.raises(ValueError):
        st.initial_state(eta=too_rich)
    with pytest.raises(ValueError):
        st.energy_report([state])
    with pytest.raises(ValueError):
        st.energy_report([state, state], [SourceBundle()] * 3)
