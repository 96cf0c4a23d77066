"""Continuation of the coupled solve across chained time slabs.

Each slab is solved by the fixed-point iteration with coefficients anchored
at the displacement reached so far; the run restarts from slab endpoints,
halves the slab length when the iteration stops contracting, and monitors
the geometry for self-intersection, chart degeneracy, and the displacement
budget. Solver trouble surfaces as a termination reason, never an exception.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coupled_linear import (
    CoupledState,
    CoupledStepper,
    EnergyLedger,
    PhysicalConstants,
)
from .discretization import MixedSpace, build_mesh
from .errors import (
    BeamflowError,
    DegeneracyDuringIteration,
    MaxIterExceeded,
    SlabTooLong,
)
from .fourier import PeriodicField, real_mode_deriv_weights, real_mode_mass_weights
from .geometry import (
    DegeneracyReport,
    ReferenceGeometry,
    degeneracy_check,
    self_intersection_check,
)
from .nonlinear import Trajectory, picard_solve, source_terms, ystar_distance
from .stokes import bogovskii_lift, broken_h2_seminorm

__all__ = [
    "RunConfig",
    "SlabLog",
    "RunResult",
    "run",
    "acceleration_diagnostics",
    "terminal_state_distance",
]

TERMINATIONS = ("horizon", "self_intersection", "degeneracy",
                "displacement_limit", "solver_failure")

_GUARD_FRACTION = 0.95
# iterates stay geometrically valid up to a 5 percent tube margin; the
# continuation stops at twice that margin so the next anchor keeps headroom
_STOP_MARGIN = 0.10
_HALVINGS = 10


@dataclass
class RunConfig:
    """Everything a continuation run needs.

    ``eta`` and ``eta_velocity`` take real mode vectors or periodic fields,
    ``velocity`` a callable on points or a dof vector. ``forcing`` maps
    (points, t) to a velocity-shaped array on the displaced domain and
    ``beam_load`` maps t to real mode coefficients of the load density.
    ``displacement_limit`` defaults to the tube half-width; the run stops
    once the displacement reaches 95 percent of it, or earlier when the
    deformed boundary loses its geometric margins.
    """

    geometry: ReferenceGeometry
    mesh_size: float = 0.2
    beam_modes: int = 8
    horizon: float = 1.0
    t_star: float = 0.2
    dt: float = 0.025
    picard_tol: float = 1e-9
    theta_max: float = 0.9
    max_iter: int = 25
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    displacement_limit: float | None = None
    eta: object | None = None
    eta_velocity: object | None = None
    velocity: object | None = None
    forcing: object | None = None
    beam_load: object | None = None
    out_dir: str | None = None

    def budget(self) -> float:
        limit = self.displacement_limit
        return float(self.geometry.L if limit is None else limit)

    def validate(self):
        if self.horizon <= 0.0 or self.t_star <= 0.0 or self.dt <= 0.0:
            raise ValueError("horizon, t_star, and dt must be positive")
        if self.t_star > self.horizon + 1e-12:
            raise ValueError("t_star cannot exceed the horizon")
        if round(self.t_star / self.dt) < 1:
            raise ValueError("dt leaves no whole step inside one slab")
        if not (self.picard_tol > 0.0 and 0.0 < self.theta_max <= 1.0
                and self.max_iter >= 1):
            raise ValueError("bad iteration parameters")
        limit = self.budget()
        if not (0.0 < limit <= self.geometry.L):
            raise ValueError(
                f"displacement limit {limit} outside (0, {self.geometry.L}]")
        if self.mesh_size <= 0.0 or self.beam_modes < 1:
            raise ValueError("bad discretization parameters")


@dataclass
class SlabLog:
    """Record of one accepted slab."""

    index: int
    t_start: float
    t_end: float
    dt: float
    iterations: int
    final_distance: float
    max_theta: float
    flux_defect: float


@dataclass
class RunResult:
    """Glued states, why the run stopped, and its ledgers."""

    states: list
    termination: str
    energy: EnergyLedger
    slabs: list
    margin: DegeneracyReport
    config: RunConfig
    space: MixedSpace
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def final(self) -> CoupledState:
        return self.states[-1]


def _initial_state(stepper: CoupledStepper, config: RunConfig) -> CoupledState:
    """Initial state whose velocity satisfies the divergence rows exactly.

    The raw field (given profile, or the beam pattern alone) is corrected
    by a boundary-vanishing lift of its divergence defect, which keeps the
    interface condition intact.
    """
    state = stepper.initial_state(eta=config.eta, w=config.eta_velocity,
                                  u=config.velocity, balance=True)
    residual = np.abs(stepper.ops.D @ state.u).max()
    if residual > 1e-12 * (1.0 + np.abs(state.u).max()):
        grad = stepper.space.velocity_grad_at_quad(state.u)
        if stepper.fields is None:
            defect = np.einsum("qkk->q", grad)
        else:
            defect = np.einsum("qmk,qmk->q", stepper.fields.B, grad)
        correction = bogovskii_lift(stepper.space, defect, ops=stepper.ops)
        state.u -= correction
        state.u_prev = state.u.copy()
    return state


def _glue_energy(parts) -> EnergyLedger:
    keep = [parts[0]]
    for led in parts[1:]:
        keep.append(EnergyLedger(
            t=led.t[1:], energy=led.energy[1:],
            dissipation=led.dissipation[1:], work_f=led.work_f[1:],
            work_g=led.work_g[1:], residual=led.residual[1:],
            c_pi=led.c_pi[1:]))
    return EnergyLedger(
        t=np.concatenate([led.t for led in keep]),
        energy=np.concatenate([led.energy for led in keep]),
        dissipation=np.concatenate([led.dissipation for led in keep]),
        work_f=np.concatenate([led.work_f for led in keep]),
        work_g=np.concatenate([led.work_g for led in keep]),
        residual=np.concatenate([led.residual for led in keep]),
        c_pi=np.concatenate([led.c_pi for led in keep]))


def run(config: RunConfig) -> RunResult:
    """March the coupled system to the horizon or a blow-up monitor.

    Slabs that fail to contract, exceed the sweep budget, or degenerate
    mid-iteration are retried with halved length and time step down to a
    floor; accepted endpoints feed the displacement guard, the
    self-intersection check, and the degeneracy monitor that set the
    termination reason. Returns the glued state sequence with one energy
    ledger row per accepted step and one log entry per accepted slab.
    """
    config.validate()
    geo = config.geometry
    mesh = build_mesh(geo, config.mesh_size)
    space = MixedSpace(geo, mesh, beam_modes=config.beam_modes)

    stepper = CoupledStepper(space, constants=config.constants)
    probe = stepper.initial_state(eta=config.eta, w=config.eta_velocity)
    eta_start = PeriodicField.from_real_modes(probe.eta)
    if eta_start.sup_norm() >= geo.L:
        raise ValueError("initial displacement reaches the tube boundary")
    start_check = degeneracy_check(geo, eta_start)
    if not start_check.ok:
        raise ValueError("initial displacement is degenerate: "
                         + "; ".join(start_check.reasons))
    if self_intersection_check(geo, eta_start):
        raise ValueError("initial boundary crosses itself")

    if np.abs(probe.eta).max() > 0.0:
        stepper = CoupledStepper(space, eta0=eta_start,
                                 constants=config.constants)
    state = _initial_state(stepper, config)

    budget = config.budget()
    t_star = float(config.t_star)
    dt = float(config.dt)
    t_star_min = config.horizon / 2 ** _HALVINGS

    states = [state]
    slabs = []
    energy_parts = []
    margin = start_check
    termination = None
    message = ""

    while termination is None:
        remaining = config.horizon - state.t
        if remaining <= 1e-12 * config.horizon:
            termination = "horizon"
            break
        slab_len = min(t_star, remaining)
        n_steps = max(1, int(round(slab_len / dt)))
        dt_slab = slab_len / n_steps

        try:
            traj, report = picard_solve(
                stepper, state, t_star=slab_len, dt=dt_slab,
                forcing=config.forcing, beam_load=config.beam_load,
                tol=config.picard_tol, max_iter=config.max_iter,
                theta_max=config.theta_max)
        except (SlabTooLong, MaxIterExceeded,
                DegeneracyDuringIteration) as exc:
            if t_star / 2.0 < t_star_min:
                if isinstance(exc, DegeneracyDuringIteration):
                    termination = "degeneracy"
                    message = str(exc)
                else:
                    termination = "solver_failure"
                    message = f"slab length floor reached: {exc}"
                break
            t_star /= 2.0
            dt /= 2.0
            continue
        except BeamflowError as exc:
            termination = "solver_failure"
            message = str(exc)
            break

        bundles = source_terms(stepper, traj, forcing=config.forcing,
                               beam_load=config.beam_load)
        energy_parts.append(stepper.energy_report(traj.states, bundles))
        slabs.append(SlabLog(
            index=len(slabs), t_start=state.t, t_end=traj.final().t,
            dt=dt_slab, iterations=report.iterations,
            final_distance=float(report.distances[-1]),
            max_theta=float(report.thetas.max()) if len(report.thetas)
            else 0.0,
            flux_defect=report.flux_defect))
        states.extend(traj.states[1:])
        state = traj.final()

        eta_now = state.eta_field()
        margin = degeneracy_check(geo, eta_now, margin_fraction=_STOP_MARGIN)
        sup_eta = eta_now.sup_norm()
        if self_intersection_check(geo, eta_now):
            termination = "self_intersection"
            message = "deformed boundary crosses itself"
        elif not margin.ok:
            termination = "degeneracy"
            message = "; ".join(margin.reasons)
        elif sup_eta >= _GUARD_FRACTION * budget:
            termination = "displacement_limit"
            message = (f"displacement {sup_eta:.4f} reached "
                       f"{_GUARD_FRACTION:.2f} of budget {budget:.4f}")
        elif remaining - slab_len > 1e-12 * config.horizon:
            try:
                stepper = CoupledStepper(space, eta0=eta_now,
                                         constants=config.constants)
            except BeamflowError as exc:
                termination = "degeneracy"
                message = f"re-anchoring failed: {exc}"

    if energy_parts:
        energy = _glue_energy(energy_parts)
    else:
        energy = EnergyLedger(
            t=np.array([states[0].t]),
            energy=np.array([stepper.energy(states[0])]),
            dissipation=np.zeros(1), work_f=np.zeros(1),
            work_g=np.zeros(1), residual=np.zeros(1),
            c_pi=np.array([states[0].c_pi]))
    return RunResult(states=states, termination=termination, energy=energy,
                     slabs=slabs, margin=margin, config=config, space=space,
                     message=message)


def acceleration_diagnostics(result: RunResult) -> dict:
    """Acceleration-scale quantities of a run and their data-side bound.

    The solution side collects the supremum of the velocity gradient
    energy, time-summed second derivatives, accelerations and pressure
    gradients, and the matching beam quantities; the data side collects the
    same scales of the initial state and the time-summed beam load slope.
    Reports ``ratio`` = solution total / (data total + 1).
    """
    states = result.states
    space = result.space
    plain = space.assemble()
    k_max = space.k_max
    pair = real_mode_mass_weights(k_max)
    d2 = real_mode_deriv_weights(k_max, 2)
    d4 = real_mode_deriv_weights(k_max, 4)
    d6 = real_mode_deriv_weights(k_max, 6)

    sup_grad = max(float(s.u @ (plain.K @ s.u)) for s in states)
    sup_beam = max(float(s.w @ (pair * d2 * s.w))
                   + float(s.eta @ (pair * d6 * s.eta)) for s in states)
    sum_h2 = 0.0
    sum_accel = 0.0
    sum_pgrad = 0.0
    sum_beam = 0.0
    sum_load = 0.0
    for n in range(1, len(states)):
        s = states[n]
        dt = s.t - states[n - 1].t
        ut = (s.u - states[n - 1].u) / dt
        wt = (s.w - states[n - 1].w) / dt
        sum_h2 += dt * broken_h2_seminorm(space, s.u) ** 2
        sum_accel += dt * float(ut @ (plain.M @ ut))
        sum_pgrad += dt * float(s.pressure @ (plain.Kp @ s.pressure))
        sum_beam += dt * (float(s.w @ (pair * d4 * s.w))
                          + float(wt @ (pair * wt)))
        if result.config.beam_load is not None:
            g = np.asarray(result.config.beam_load(s.t), dtype=float)
            sum_load += dt * float(g @ (pair * d2 * g))

    first = states[0]
    data_grad = float(first.u @ (plain.K @ first.u))
    data_beam = (float(first.eta @ (pair * d6 * first.eta))
                 + float(first.w @ (pair * d2 * first.w)))

    lhs = sup_grad + sup_beam + sum_h2 + sum_accel + sum_pgrad + sum_beam
    rhs = data_grad + data_beam + sum_load
    return {
        "sup_grad_energy": sup_grad,
        "sup_beam_energy": sup_beam,
        "sum_second_derivs": sum_h2,
        "sum_accelerations": sum_accel,
        "sum_pressure_grads": sum_pgrad,
        "sum_beam_accelerations": sum_beam,
        "data_grad_energy": data_grad,
        "data_beam_energy": data_beam,
        "data_load_slope": sum_load,
        "solution_total": lhs,
        "data_total": rhs,
        "ratio": lhs / (rhs + 1.0),
    }


def terminal_state_distance(result_a: RunResult, result_b: RunResult) -> float:
    """Slab-norm distance between the terminal states of two runs.

    Wraps each terminal state as a one-level trajectory so only the
    supremum terms of the norm contribute; both runs must share a space.
    """
    stepper = CoupledStepper(result_a.space,
                             constants=result_a.config.constants)
    sa = result_a.final()
    sb = result_b.final()
    ta = Trajectory(states=[sa], stepper=stepper)
    tb = Trajectory(states=[sb], stepper=stepper)
    return ystar_distance(ta, tb)
