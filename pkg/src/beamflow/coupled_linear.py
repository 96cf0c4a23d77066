"""One implicit time step of the linearized fluid-beam system.

The fluid unknowns live on the reference mesh with coefficient fields frozen
at an anchor displacement; the beam unknowns are real Fourier modes of the
boundary displacement and its velocity. The interface condition is enforced
strongly: boundary velocity dofs are eliminated in favor of the beam velocity
modes, so each backward-Euler step solves one monolithic sparse system whose
energy identity is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import MixedSpace
from .errors import (
    CompatibilityViolation,
    DegenerateDenominator,
    LinearSolveFailure,
)
from .fourier import PeriodicField, real_mode_deriv_weights, real_mode_mass_weights
from .geometry import fields_from_frame, tube_frame

__all__ = [
    "PhysicalConstants",
    "CoupledState",
    "SourceBundle",
    "PressureSplit",
    "EnergyLedger",
    "CoupledStepper",
]

_FLUX_TOL = 1e-8


@dataclass(frozen=True)
class PhysicalConstants:
    """Coefficients of the coupled system; all must be strictly positive.

    ``fluid_density`` and ``viscosity`` scale the fluid inertia and stress,
    ``beam_density`` the beam inertia, ``beam_damping`` the velocity
    smoothing of the beam, and ``beam_rigidity`` the bending stiffness.
    """

    fluid_density: float = 1.0
    viscosity: float = 1.0
    beam_density: float = 1.0
    beam_damping: float = 1.0
    beam_rigidity: float = 1.0

    def __post_init__(self):
        for name in ("fluid_density", "viscosity", "beam_density",
                     "beam_damping", "beam_rigidity"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be strictly positive, "
                                 f"got {value}")


@dataclass
class CoupledState:
    """Snapshot of the coupled unknowns at one time level.

    ``u`` holds interleaved velocity dofs, ``pi0`` the zero-mean pressure,
    ``c_pi`` its spatial constant, and ``eta``/``w`` the beam displacement
    and velocity in the real mode layout. Previous-level copies support
    backward time differences; ``dt_prev`` is zero before the first step.
    """

    t: float
    u: np.ndarray
    pi0: np.ndarray
    c_pi: float
    eta: np.ndarray
    w: np.ndarray
    u_prev: np.ndarray
    w_prev: np.ndarray
    eta_prev: np.ndarray
    dt_prev: float = 0.0

    @property
    def pressure(self) -> np.ndarray:
        """Total pressure dofs, constant included."""
        return self.pi0 + self.c_pi

    def eta_field(self) -> PeriodicField:
        return PeriodicField.from_real_modes(self.eta)

    def w_field(self) -> PeriodicField:
        return PeriodicField.from_real_modes(self.w)


@dataclass
class SourceBundle:
    """Step data sampled at quadrature points plus beam load modes.

    ``bfh`` is the volume load paired against velocity test functions in the
    reference measure, ``H`` a matrix-valued flux correction paired against
    test gradients, ``h`` a divergence defect density on the displaced
    volume element, and ``g`` the real mode coefficients of the beam load.
    ``None`` entries mean zero.
    """

    bfh: np.ndarray | None = None
    H: np.ndarray | None = None
    h: np.ndarray | None = None
    g: np.ndarray | None = None


@dataclass
class PressureSplit:
    """Zero-mean pressure, its constant, and the mean force balance check."""

    pi0: np.ndarray
    c_pi: float
    denominator: float
    residual: float


@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping; index 0 describes the initial state."""

    t: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    work_f: np.ndarray
    work_g: np.ndarray
    residual: np.ndarray
    c_pi: np.ndarray


class CoupledStepper:
    """Backward-Euler integrator for the linearized coupled system.

    Operators are assembled once for the anchor displacement ``eta0`` (plain
    reference operators when it is ``None``) and factored per distinct time
    step size. The monolithic unknown is (interior velocity, beam velocity
    modes, pressure); the pressure constant is determined by the beam's mean
    force balance, so no gauge constraint is added.
    """

    def __init__(self, space: MixedSpace, eta0: PeriodicField | None = None,
                 constants: PhysicalConstants | None = None):
        self.space = space
        self.eta0 = eta0
        self.constants = constants if constants is not None \
            else PhysicalConstants()
        if eta0 is not None and np.abs(eta0.coeffs).max() > 0.0:
            frame = tube_frame(space.geometry, space.quad_points)
            self.fields = fields_from_frame(frame, eta0)
            self.J_quad = self.fields.J
        else:
            self.fields = None
            self.J_quad = np.ones(len(space.quad_points))
        self.ops = space.assemble(self.fields)
        c = self.constants
        self.M = (c.fluid_density * self.ops.M).tocsr()
        self.K = (c.viscosity * self.ops.K).tocsr()

        self.n_beam = space.n_beam
        self.k_max = space.k_max
        self.pair_w = real_mode_mass_weights(self.k_max)
        deriv2 = real_mode_deriv_weights(self.k_max, 2)
        deriv4 = real_mode_deriv_weights(self.k_max, 4)
        self.mass_w = c.beam_density * self.pair_w
        self.stiff_w = c.beam_damping * self.pair_w * deriv2
        self.bend_w = c.beam_rigidity * self.pair_w * deriv4

        self.trace = space.trace_matrix()
        self.boundary = space.boundary_velocity_dofs
        self.interior = np.setdiff1d(np.arange(space.n_velocity), self.boundary)
        self.trace_b = self.trace[self.boundary]

        self.flux_row = np.asarray(self.ops.D.sum(axis=0)).ravel()
        self.flux_modes = self.flux_row @ self.trace
        self.volume_weight = float(
            (space.quad_wdet.ravel() * self.J_quad).sum())
        self._mp_row = np.asarray(self.ops.Mp.sum(axis=0)).ravel()
        self._area = float(self._mp_row.sum())
        self._lu = {}

    # -- state construction --------------------------------------------------
    def initial_state(self, eta=None, w=None, u=None, t: float = 0.0,
                      balance: bool = True) -> CoupledState:
        """Assemble a consistent initial state.

        ``eta`` and ``w`` accept real mode vectors or periodic fields; ``u``
        accepts a dof vector or a callable on points. Boundary velocity dofs
        are overwritten with the beam pattern, and with ``balance`` the
        constant beam mode is shifted so the total boundary flux vanishes,
        which the divergence rows preserve for source-free runs.
        """
        eta_v = self._mode_vector(eta)
        w_v = self._mode_vector(w)
        if u is None:
            u_v = np.zeros(self.space.n_velocity)
        elif callable(u):
            u_v = self.space.interpolate_velocity(u)
        else:
            u_v = np.asarray(u, dtype=float).copy()
        u_v[self.boundary] = self.trace_b @ w_v
        if balance:
            shift = (self.flux_row @ u_v) / self.flux_modes[0]
            w_v = w_v.copy()
            w_v[0] -= shift
            u_v[self.boundary] = self.trace_b @ w_v
        return CoupledState(
            t=t, u=u_v, pi0=np.zeros(self.space.n_pressure), c_pi=0.0,
            eta=eta_v, w=w_v, u_prev=u_v.copy(), w_prev=w_v.copy(),
            eta_prev=eta_v.copy(), dt_prev=0.0)

    def _mode_vector(self, data) -> np.ndarray:
        if data is None:
            return np.zeros(self.n_beam)
        if isinstance(data, PeriodicField):
            if data.max_mode > self.k_max:
                raise ValueError(
                    f"field has mode {data.max_mode} beyond cap {self.k_max}")
            vec = np.zeros(self.n_beam)
            vec[0] = data.coeffs[0].real
            k = data.max_mode
            vec[1:k + 1] = 2.0 * data.coeffs[1:].real
            vec[self.k_max + 1:self.k_max + k + 1] = -2.0 * data.coeffs[1:].imag
            return vec
        vec = np.asarray(data, dtype=float)
        if vec.shape != (self.n_beam,):
            raise ValueError(
                f"mode vector has shape {vec.shape}, expected ({self.n_beam},)")
        return vec.copy()

    # -- sources --------------------------------------------------------------
    def _momentum_rhs(self, sources: SourceBundle) -> np.ndarray:
        rhs = np.zeros(self.space.n_velocity)
        if sources.bfh is not None:
            rhs += self.space.velocity_rhs(sources.bfh)
        if sources.H is not None:
            rhs += self.space.gradient_rhs(sources.H)
        return rhs

    def _divergence_rhs(self, sources: SourceBundle) -> np.ndarray:
        if sources.h is None:
            return np.zeros(self.space.n_pressure)
        return self.space.pressure_rhs(self.J_quad * np.asarray(sources.h))

    def _beam_rhs(self, sources: SourceBundle) -> np.ndarray:
        if sources.g is None:
            return np.zeros(self.n_beam)
        g = np.asarray(sources.g, dtype=float)
        return self.pair_w * g

    def source_imbalance(self, sources: SourceBundle,
                         state: CoupledState) -> float:
        """Divergence-data total minus the state's discrete boundary flux."""
        total = float(self._divergence_rhs(sources).sum())
        return total - float(self.flux_row @ state.u)

    def compatibility_project(self, sources: SourceBundle,
                              state: CoupledState):
        """Shift the divergence defect by a constant to balance the flux.

        Returns the adjusted bundle and the applied shift; compatible data
        comes back unchanged with zero shift.
        """
        imbalance = self.source_imbalance(sources, state)
        shift = -imbalance / self.volume_weight
        if imbalance == 0.0:
            return sources, 0.0
        nq = len(self.space.quad_points)
        h = np.zeros(nq) if sources.h is None else np.asarray(sources.h, float)
        return replace(sources, h=h + shift), shift

    # -- the monolithic step ---------------------------------------------------
    def _factorization(self, dt: float):
        key = float(dt)
        if key in self._lu:
            return self._lu[key]
        S = (self.M / dt + self.K).tocsr()
        ii, bb = self.interior, self.boundary
        S_ii = S[ii][:, ii]
        S_ib = S[ii][:, bb] @ self.trace_b
        S_bi = self.trace_b.T @ S[bb][:, ii]
        S_bb = (self.trace_b.T @ S[bb][:, bb] @ self.trace_b).toarray()
        beam_diag = self.mass_w / dt + self.stiff_w + dt * self.bend_w
        S_bb[np.diag_indices_from(S_bb)] += beam_diag

        D_i = self.ops.D[:, ii]
        D_w = self.ops.D[:, bb] @ self.trace_b
        system = sp.bmat(
            [[S_ii, S_ib, -D_i.T],
             [S_bi, sp.csr_matrix(S_bb), -D_w.T],
             [D_i, D_w, None]], format="csc")
        try:
            lu = spla.splu(system)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"coupled factorization failed: {exc}")
        self._lu[key] = lu
        return lu

    def step(self, state: CoupledState, sources: SourceBundle,
             dt: float, check_flux: bool = True) -> CoupledState:
        """Advance one backward-Euler step of length ``dt``.

        With ``check_flux`` the divergence data must balance the state's
        boundary flux (apply ``compatibility_project`` first). Callers whose
        data legitimately move the boundary flux, such as the fixed-point
        iteration on the displaced geometry, disable the check; the constant
        pressure row then balances the total through the mean beam mode. The
        returned state satisfies the interface condition exactly and carries
        the split pressure.
        """
        if dt <= 0.0:
            raise ValueError(f"time step {dt} must be positive")
        div_rhs = self._divergence_rhs(sources)
        if check_flux:
            imbalance = float(div_rhs.sum()) - float(self.flux_row @ state.u)
            scale = 1.0 + abs(float(div_rhs.sum())) + abs(
                float(self.flux_row @ state.u))
            if abs(imbalance) > _FLUX_TOL * scale:
                raise CompatibilityViolation(
                    f"divergence data misses the boundary flux by "
                    f"{imbalance:.3e}")

        force = self._momentum_rhs(sources)
        rhs_full = force + (self.M @ state.u) / dt
        rhs_i = rhs_full[self.interior]
        rhs_w = (self.trace_b.T @ rhs_full[self.boundary]
                 + self.mass_w * state.w / dt
                 + self._beam_rhs(sources)
                 - self.bend_w * state.eta)

        lu = self._factorization(dt)
        n_i = len(self.interior)
        sol = lu.solve(np.concatenate([rhs_i, rhs_w, div_rhs]))
        if not np.all(np.isfinite(sol)):
            raise LinearSolveFailure("coupled solve returned non-finite values")
        u = np.zeros(self.space.n_velocity)
        u[self.interior] = sol[:n_i]
        w = sol[n_i:n_i + self.n_beam]
        u[self.boundary] = self.trace_b @ w
        pi = sol[n_i + self.n_beam:]
        c_pi = float(self._mp_row @ pi) / self._area
        eta = state.eta + dt * w
        return CoupledState(
            t=state.t + dt, u=u, pi0=pi - c_pi, c_pi=c_pi, eta=eta, w=w,
            u_prev=state.u, w_prev=state.w, eta_prev=state.eta, dt_prev=dt)

    # -- diagnostics ------------------------------------------------------------
    def interface_residual(self, state: CoupledState) -> float:
        """Largest gap between boundary velocity dofs and the beam pattern."""
        gap = state.u[self.boundary] - self.trace_b @ state.w
        return float(np.abs(gap).max())

    def pressure_split(self, state: CoupledState,
                       sources: SourceBundle | None = None) -> PressureSplit:
        """Split the pressure and check the mean force balance.

        The constant is tested against the identity obtained by pairing the
        momentum rows with the constant beam pattern: the traction functional
        of (velocity, zero-mean pressure) plus the mean beam acceleration
        minus the mean load equals ``c_pi`` times the pattern's flux.
        """
        den = float(self.flux_modes[0])
        if den <= 1e-8:
            raise DegenerateDenominator(
                f"constant-mode flux {den:.3e} is not positive")
        if sources is None:
            sources = SourceBundle()
        pattern = np.asarray(self.trace[:, [0]].todense()).ravel()
        traction = self.K @ state.u - self.ops.D.T @ state.pi0
        traction -= self._momentum_rhs(sources)
        if state.dt_prev > 0.0:
            traction += (self.M @ (state.u - state.u_prev)) / state.dt_prev
            accel0 = self.constants.beam_density * (
                state.w[0] - state.w_prev[0]) / state.dt_prev
        else:
            accel0 = 0.0
        load0 = float(self._beam_rhs(sources)[0])
        numerator = float(pattern @ traction) + accel0 - load0
        residual = abs(state.c_pi * den - numerator) / (1.0 + abs(numerator))
        return PressureSplit(pi0=state.pi0, c_pi=state.c_pi,
                             denominator=den, residual=residual)

    def energy(self, state: CoupledState) -> float:
        """Fluid kinetic energy plus beam kinetic and bending energy."""
        fluid = 0.5 * float(state.u @ (self.M @ state.u))
        beam = 0.5 * float(state.w @ (self.mass_w * state.w))
        bend = 0.5 * float(state.eta @ (self.bend_w * state.eta))
        return fluid + beam + bend

    def energy_report(self, states, sources=None) -> EnergyLedger:
        """Energy, dissipation, work, and identity residual along a run.

        ``sources`` may be ``None`` (source-free), one bundle reused for
        every step, or a sequence with one bundle per step. The residual of
        step n is E(n) - E(n-1) + dt D(n) - dt (work); for the implicit
        scheme it equals minus the squared increments, so it is never
        positive for source-free runs.
        """
        states = list(states)
        if len(states) < 2:
            raise ValueError("energy report needs at least two states")
        n_steps = len(states) - 1
        if sources is None:
            bundles = [SourceBundle()] * n_steps
        elif isinstance(sources, SourceBundle):
            bundles = [sources] * n_steps
        else:
            bundles = list(sources)
            if len(bundles) != n_steps:
                raise ValueError(
                    f"{len(bundles)} bundles for {n_steps} steps")

        t = np.array([s.t for s in states])
        energy = np.array([self.energy(s) for s in states])
        c_pi = np.array([s.c_pi for s in states])
        dissipation = np.zeros(len(states))
        work_f = np.zeros(len(states))
        work_g = np.zeros(len(states))
        residual = np.zeros(len(states))
        for n in range(1, len(states)):
            s = states[n]
            dt = s.t - states[n - 1].t
            bundle = bundles[n - 1]
            dissipation[n] = float(s.u @ (self.K @ s.u)
                                   + s.w @ (self.stiff_w * s.w))
            work_f[n] = float(self._momentum_rhs(bundle) @ s.u
                              + self._divergence_rhs(bundle) @ s.pressure)
            work_g[n] = float(self._beam_rhs(bundle) @ s.w)
            residual[n] = (energy[n] - energy[n - 1]
                           + dt * dissipation[n]
                           - dt * (work_f[n] + work_g[n]))
        return EnergyLedger(t=t, energy=energy, dissipation=dissipation,
                            work_f=work_f, work_g=work_g, residual=residual,
                            c_pi=c_pi)
