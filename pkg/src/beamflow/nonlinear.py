"""Picard iteration for the nonlinear coupled system on one time slab.

Each iterate freezes the transformed coefficient fields along the previous
trajectory, turns the coefficient differences into step sources for the
linearized solver, and rolls the slab forward. Contraction is measured in a
discrete version of the slab norm combining fluid energy, acceleration,
pressure, and beam regularity terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coupled_linear import CoupledState, CoupledStepper, SourceBundle
from .errors import (
    CompatibilityViolation,
    DegenerateJacobian,
    DegeneracyDuringIteration,
    GridMismatch,
    MaxIterExceeded,
    SlabTooLong,
)
from .fourier import PeriodicField, real_mode_deriv_weights, real_mode_mass_weights
from .geometry import degeneracy_check, fields_from_frame, tube_frame
from .stokes import broken_h2_seminorm

__all__ = [
    "Trajectory",
    "PicardReport",
    "source_terms",
    "apply_picard_map",
    "volume_defect",
    "ystar_distance",
    "picard_solve",
]


@dataclass
class Trajectory:
    """States on a uniform time grid plus the solver that produced them."""

    states: list
    stepper: CoupledStepper
    distances: list = field(default_factory=list)
    thetas: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def dt(self) -> float:
        t = self.times
        if len(t) < 2:
            return 0.0
        steps = np.diff(t)
        if np.abs(steps - steps[0]).max() > 1e-12 * (1.0 + abs(steps[0])):
            raise GridMismatch("trajectory time grid is not uniform")
        return float(steps[0])

    def final(self) -> CoupledState:
        return self.states[-1]


@dataclass
class PicardReport:
    """Iteration record of one slab solve.

    ``flux_defect`` is the largest deformed-volume flux along the returned
    trajectory; it sits at the convergence tolerance for a genuine fixed
    point.
    """

    converged: bool
    iterations: int
    distances: np.ndarray
    thetas: np.ndarray
    flux_defect: float


def _identity_fields(n: int):
    J = np.ones(n)
    eye = np.broadcast_to(np.eye(2), (n, 2, 2))
    return J, eye.copy(), eye.copy(), eye.copy()


def _anchor_fields(stepper: CoupledStepper):
    if stepper.fields is None:
        return _identity_fields(len(stepper.space.quad_points))
    f = stepper.fields
    return f.J, f.A, f.B, f.Finv


def _plain_ops(stepper: CoupledStepper):
    if stepper.fields is None:
        return stepper.ops
    cached = getattr(stepper, "_plain_ops", None)
    if cached is None:
        cached = stepper.space.assemble()
        stepper._plain_ops = cached
    return cached


def _quad_frame(stepper: CoupledStepper):
    cached = getattr(stepper, "_quad_frame", None)
    if cached is None:
        cached = tube_frame(stepper.space.geometry, stepper.space.quad_points)
        stepper._quad_frame = cached
    return cached


def source_terms(stepper: CoupledStepper, trajectory: Trajectory,
                 forcing=None, beam_load=None) -> list:
    """Step sources for each level of the trajectory past the first.

    Level n collects the coefficient-difference terms between the anchor
    displacement and the iterate displacement at time t_n, the transported
    convection of the iterate velocity, and the pulled-back forcing. Time
    derivatives use backward differences along the trajectory.
    """
    space = stepper.space
    states = trajectory.states
    dt = trajectory.dt
    J0, A0, B0, _ = _anchor_fields(stepper)
    frame = _quad_frame(stepper)
    rho_f = stepper.constants.fluid_density
    mu = stepper.constants.viscosity

    bundles = []
    for n in range(1, len(states)):
        s = states[n]
        zeta = PeriodicField.from_real_modes(s.eta)
        report = degeneracy_check(space.geometry, zeta)
        if not report.ok:
            raise DegenerateJacobian(
                f"iterate displacement degenerates at t={s.t:.4f}")
        w_beam = PeriodicField.from_real_modes(s.w)
        f_z = fields_from_frame(frame, zeta, eta_t=w_beam)

        u_vals = space.velocity_at_quad(s.u)
        u_grad = space.velocity_grad_at_quad(s.u)
        du_dt = space.velocity_at_quad((s.u - states[n - 1].u) / dt)
        q_vals = space.pressure_at_quad(s.pressure)

        rel = u_vals - f_z.dt_psi
        v_ref = np.einsum("qam,qm->qa", f_z.Finv, rel)
        convect = np.einsum("qa,qak->qk", v_ref, u_grad)

        bfh = -rho_f * ((f_z.J - J0)[:, None] * du_dt
                        + f_z.J[:, None] * convect)
        if forcing is not None:
            bfh = bfh + f_z.J[:, None] * np.asarray(forcing(f_z.psi, s.t))

        H = mu * np.einsum("qmb,qbk->qmk", A0 - f_z.A, u_grad)
        H -= (B0 - f_z.B) * q_vals[:, None, None]
        h = np.einsum("qmk,qmk->q", B0 - f_z.B, u_grad) / J0

        g = None if beam_load is None else np.asarray(beam_load(s.t))
        bundles.append(SourceBundle(bfh=bfh, H=H, h=h, g=g))
    return bundles


def apply_picard_map(stepper: CoupledStepper, trajectory: Trajectory,
                     initial: CoupledState, forcing=None,
                     beam_load=None) -> Trajectory:
    """One sweep of the fixed-point map: sources from the iterate, then a
    linearized roll of the slab from the initial state.

    The divergence data pass through unprojected: their total drives the
    mean beam mode so that, at the fixed point, the flow is divergence free
    in the displaced geometry rather than the reference one.
    """
    bundles = source_terms(stepper, trajectory, forcing=forcing,
                           beam_load=beam_load)
    dt = trajectory.dt
    states = [initial]
    for bundle in bundles:
        states.append(stepper.step(states[-1], bundle, dt, check_flux=False))
    return Trajectory(states=states, stepper=stepper)


def volume_defect(stepper: CoupledStepper, trajectory: Trajectory) -> np.ndarray:
    """Deformed-volume flux of every trajectory level.

    Pairs the constant pressure test function with the divergence of each
    state in its own displaced geometry. At a fixed point of the Picard map
    the displaced flow is weakly divergence free, so these totals sit at
    the convergence tolerance; growth along a run flags a corrupted state.
    """
    space = stepper.space
    frame = _quad_frame(stepper)
    wdet = np.asarray(space.quad_wdet).ravel()
    defects = np.zeros(len(trajectory.states))
    for n, s in enumerate(trajectory.states):
        grad = space.velocity_grad_at_quad(s.u)
        zeta = PeriodicField.from_real_modes(s.eta)
        if np.abs(zeta.coeffs).max() > 0.0:
            fields = fields_from_frame(frame, zeta)
            defects[n] = float(np.einsum("q,qmk,qmk->", wdet, fields.B, grad))
        else:
            defects[n] = float(np.einsum("q,qkk->", wdet, grad))
    return defects


def _beam_sup(mode_sq: np.ndarray, deltas) -> float:
    return max(float(d @ (mode_sq * d)) for d in deltas)


def ystar_distance(traj_a: Trajectory, traj_b: Trajectory) -> float:
    """Distance between two trajectories in the discrete slab norm.

    Combines the supremum of the weighted fluid energy, time-summed
    gradients, second derivatives, accelerations, and pressure terms of the
    velocity difference with supremum and time-summed beam seminorms of the
    displacement difference, as the square root of the total.
    """
    ta, tb = traj_a.times, traj_b.times
    if len(ta) != len(tb) or np.abs(ta - tb).max() > 1e-12 * (1.0 + ta[-1]):
        raise GridMismatch("trajectories live on different time grids")
    stepper = traj_a.stepper
    space = stepper.space
    dt = traj_a.dt

    plain = _plain_ops(stepper)
    mass_w = real_mode_mass_weights(stepper.k_max)
    d2 = real_mode_deriv_weights(stepper.k_max, 2)
    d4 = real_mode_deriv_weights(stepper.k_max, 4)
    d6 = real_mode_deriv_weights(stepper.k_max, 6)

    du = [a.u - b.u for a, b in zip(traj_a.states, traj_b.states)]
    dw = [a.w - b.w for a, b in zip(traj_a.states, traj_b.states)]
    de = [a.eta - b.eta for a, b in zip(traj_a.states, traj_b.states)]
    dp = [a.pressure - b.pressure
          for a, b in zip(traj_a.states, traj_b.states)]

    total = max(float(d @ (stepper.ops.M @ d)) for d in du)
    total += _beam_sup(mass_w * d2, dw)
    total += _beam_sup(mass_w * d6, de)
    total += dt * sum(float(d @ (plain.K @ d)) for d in du[1:])
    total += dt * sum(broken_h2_seminorm(space, d) ** 2 for d in du[1:])
    total += dt * sum(float(d @ (plain.Mp @ d)) for d in dp[1:])
    total += dt * sum(float(d @ (plain.Kp @ d)) for d in dp[1:])
    total += dt * sum(float(d @ (mass_w * d4 * d)) for d in dw[1:])
    for n in range(1, len(du)):
        ut = (du[n] - du[n - 1]) / dt
        wt = (dw[n] - dw[n - 1]) / dt
        total += dt * float(ut @ (plain.M @ ut))
        total += dt * float(wt @ (mass_w * wt))
    return float(np.sqrt(total))


def _check_initial(stepper: CoupledStepper, initial: CoupledState,
                   tol: float):
    gap = stepper.interface_residual(initial)
    if gap > 1e-10:
        raise CompatibilityViolation(
            f"initial boundary velocity misses the beam pattern by {gap:.3e}")
    div = np.abs(stepper.ops.D @ initial.u).max()
    scale = 1.0 + float(np.abs(initial.u).max())
    if div > max(tol, 1e-8) * scale:
        raise CompatibilityViolation(
            f"initial divergence residual {div:.3e} exceeds tolerance")


def picard_solve(stepper: CoupledStepper, initial: CoupledState,
                 t_star: float, dt: float, forcing=None, beam_load=None,
                 tol: float = 1e-8, max_iter: int = 25,
                 theta_max: float = 0.9):
    """Fixed-point solve of the nonlinear slab starting from ``initial``.

    The first iterate extends the initial data constantly in time. Stops
    when successive trajectories are closer than ``tol`` in the slab norm.
    Raises SlabTooLong when the contraction factor reaches ``theta_max``
    twice in a row or the distances grow three times in a row, and
    MaxIterExceeded past ``max_iter`` sweeps.
    """
    if dt <= 0.0 or t_star <= 0.0:
        raise ValueError("slab length and time step must be positive")
    n_steps = int(round(t_star / dt))
    if n_steps < 1 or abs(n_steps * dt - t_star) > 1e-10 * t_star:
        raise ValueError(
            f"slab length {t_star} is not a multiple of dt {dt}")
    _check_initial(stepper, initial, tol)

    constant = [initial]
    for n in range(1, n_steps + 1):
        s = CoupledState(
            t=initial.t + n * dt, u=initial.u.copy(), pi0=initial.pi0.copy(),
            c_pi=initial.c_pi, eta=initial.eta.copy(), w=initial.w.copy(),
            u_prev=initial.u.copy(), w_prev=initial.w.copy(),
            eta_prev=initial.eta.copy(), dt_prev=dt)
        constant.append(s)
    current = Trajectory(states=constant, stepper=stepper)

    distances = []
    thetas = []
    stall = 0
    growth = 0
    for it in range(1, max_iter + 1):
        try:
            new = apply_picard_map(stepper, current, initial,
                                   forcing=forcing, beam_load=beam_load)
        except DegenerateJacobian as exc:
            raise DegeneracyDuringIteration(str(exc)) from exc
        d = ystar_distance(new, current)
        distances.append(d)
        if len(distances) >= 2 and distances[-2] > 0.0:
            theta = d / distances[-2]
            thetas.append(theta)
            stall = stall + 1 if theta >= theta_max else 0
            growth = growth + 1 if d > distances[-2] else 0
            if stall >= 2:
                raise SlabTooLong(
                    f"contraction factor {theta:.3f} at iteration {it}")
            if growth >= 3:
                raise SlabTooLong(
                    f"iterate distances grew three times in a row")
        current = Trajectory(states=new.states, stepper=stepper,
                             distances=list(distances), thetas=list(thetas))
        if d <= tol:
            defect = float(np.abs(volume_defect(stepper, current)).max())
            report = PicardReport(
                converged=True, iterations=it,
                distances=np.array(distances), thetas=np.array(thetas),
                flux_defect=defect)
            return current, report
    raise MaxIterExceeded(
        f"picard iteration did not reach {tol:.1e} in {max_iter} sweeps; "
        f"last distance {distances[-1]:.3e}")
