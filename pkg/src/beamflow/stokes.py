"""Steady viscous flow solves and elliptic regularity diagnostics.

These routines run on the reference (undeformed) domain and serve three
purposes: convergence benchmarks of the mixed discretization, construction
of divergence-prescribed liftings, and measurement of the regularity ratio
(second derivatives and pressure gradient against the body force) that the
verification harness tracks along coupled runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import MixedSpace, _p2_shapes, _QUAD_BARY
from .errors import (
    IncompatibleBoundaryData,
    IncompatibleMean,
    LinearSolveFailure,
    ZeroLoad,
)

__all__ = [
    "StokesSolution",
    "solve_steady",
    "bogovskii_lift",
    "pressure_poisson",
    "regularity_ratio",
    "RegularityReport",
    "broken_h2_seminorm",
]


@dataclass
class StokesSolution:
    u: np.ndarray               # interleaved velocity dofs
    p: np.ndarray               # pressure dofs, mean zero
    gauge: float                # mean-constraint multiplier, near zero when
    #                             the data are compatible
    momentum_residual: float    # relative algebraic residual of the solve
    div_residual: float         # max norm of the discrete divergence rows


def _boundary_lift(space: MixedSpace, g_boundary) -> np.ndarray:
    """Velocity vector holding Dirichlet data at boundary dofs."""
    lift = np.zeros(space.n_velocity)
    if g_boundary is None:
        return lift
    if callable(g_boundary):
        vals = np.asarray(g_boundary(space.boundary_dof_params))
    else:
        vals = np.asarray(g_boundary)
    if vals.shape != (len(space.boundary_scalar_dofs), 2):
        raise ValueError("boundary data must have shape (n_boundary_dofs, 2)")
    lift[2 * space.boundary_scalar_dofs] = vals[:, 0]
    lift[2 * space.boundary_scalar_dofs + 1] = vals[:, 1]
    return lift


def solve_steady(space: MixedSpace, f_at_quad, g_boundary=None, ops=None,
                 viscosity: float = 1.0, flux_tol: float = 1e-10) -> StokesSolution:
    """Steady Stokes flow with velocity data on the boundary.

    ``f_at_quad`` holds the body force at the quadrature points, shape
    (nq, 2). Boundary data must carry zero net flux through the boundary;
    otherwise IncompatibleBoundaryData is raised. The pressure gauge fixes
    a zero mean.
    """
    if ops is None:
        ops = space.assemble()
    lift = _boundary_lift(space, g_boundary)
    flux = np.ones(space.n_pressure) @ (ops.D @ lift)
    scale = 1.0 + np.abs(lift).max()
    if abs(flux) > flux_tol * scale:
        raise IncompatibleBoundaryData(
            f"net boundary flux {flux:.3e} violates incompressibility")

    bd = space.boundary_velocity_dofs
    interior = np.setdiff1d(np.arange(space.n_velocity), bd)
    K = viscosity * ops.K
    F = space.velocity_rhs(f_at_quad)

    K_ii = K[interior][:, interior]
    K_ib = K[interior][:, bd]
    D_i = ops.D[:, interior]
    m = ops.Mp @ np.ones(space.n_pressure)
    mcol = sp.csr_matrix(m[:, None])
    sys = sp.bmat([
        [K_ii, -D_i.T, None],
        [D_i, None, mcol],
        [None, mcol.T, None],
    ], format="csc")
    rhs = np.concatenate([
        F[interior] - K_ib @ lift[bd],
        -(ops.D @ lift),
        [0.0],
    ])
    sol = spla.spsolve(sys, rhs)
    if not np.all(np.isfinite(sol)):
        raise LinearSolveFailure("steady solve produced non-finite values")
    u = lift.copy()
    u[interior] = sol[: len(interior)]
    p = sol[len(interior):-1]
    res = np.linalg.norm(sys @ sol - rhs) / (1.0 + np.linalg.norm(rhs))
    div = float(np.abs(ops.D @ u).max())
    return StokesSolution(u=u, p=p, gauge=float(sol[-1]),
                          momentum_residual=float(res), div_residual=div)


def bogovskii_lift(space: MixedSpace, h_at_quad, ops=None,
                   mean_tol: float = 1e-8) -> np.ndarray:
    """Velocity field vanishing on the boundary with prescribed divergence.

    Solves the constrained minimum-energy problem; the prescribed
    divergence must integrate to zero (IncompatibleMean otherwise).
    """
    if ops is None:
        ops = space.assemble()
    h = np.asarray(h_at_quad, dtype=float)
    H = space.pressure_rhs(h)
    total = np.ones(space.n_pressure) @ H
    norm = float(np.sqrt(max(h @ (space.quad_wdet.ravel() * h), 0.0)))
    if norm < 1e-14:
        return np.zeros(space.n_velocity)
    if abs(total) > mean_tol * norm:
        raise IncompatibleMean(
            f"divergence data has nonzero mean {total:.3e}")

    bd = space.boundary_velocity_dofs
    interior = np.setdiff1d(np.arange(space.n_velocity), bd)
    K_ii = ops.K[interior][:, interior]
    D_i = ops.D[:, interior]
    m = ops.Mp @ np.ones(space.n_pressure)
    mcol = sp.csr_matrix(m[:, None])
    sys = sp.bmat([
        [K_ii, -D_i.T, None],
        [D_i, None, mcol],
        [None, mcol.T, None],
    ], format="csc")
    rhs = np.concatenate([np.zeros(len(interior)), H, [0.0]])
    sol = spla.spsolve(sys, rhs)
    if not np.all(np.isfinite(sol)):
        raise LinearSolveFailure("divergence lift solve failed")
    u = np.zeros(space.n_velocity)
    u[interior] = sol[: len(interior)]
    return u


def pressure_poisson(space: MixedSpace, f_at_quad, ops=None) -> np.ndarray:
    """Project a vector field onto gradients: (grad p, grad q) = (f, grad q).

    Returns the mean-zero potential on the pressure space; used as an
    independent pressure reconstruction when ``f`` collects all
    non-pressure terms of the momentum balance.
    """
    if ops is None:
        ops = space.assemble()
    nt = len(space.tri_dofs)
    vals = np.asarray(f_at_quad).reshape(nt, -1, 2)
    cell = np.einsum("ta,atpm,tam->tp", space.quad_wdet, space.pressure_grads,
                     vals, optimize=True)
    rhs = np.zeros(space.n_pressure)
    np.add.at(rhs, space.mesh.triangles, cell)

    m = ops.Mp @ np.ones(space.n_pressure)
    mcol = sp.csr_matrix(m[:, None])
    sys = sp.bmat([[ops.Kp, mcol], [mcol.T, None]], format="csc")
    sol = spla.spsolve(sys, np.concatenate([rhs, [0.0]]))
    return sol[:-1]


# ---------------------------------------------------------------------------
# broken second derivatives on curved quadratic elements
# ---------------------------------------------------------------------------

def _p2_second_derivs():
    """Constant reference Hessians of the six quadratic shapes."""
    d2 = np.zeros((6, 2, 2))
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    for i in range(3):
        d2[i] = 4.0 * np.outer(g[i], g[i])
    for e, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
        d2[3 + e] = 4.0 * (np.outer(g[i], g[j]) + np.outer(g[j], g[i]))
    return d2


def velocity_hessian_at_quad(space: MixedSpace, u) -> np.ndarray:
    """Second spatial derivatives at quadrature points.

    Returns shape (nq, 2, 2, 2) with entry [alpha, beta, k] holding
    ``d^2 u_k / dx_alpha dx_beta``. On curved elements the chain rule
    contributes reference-map curvature terms.
    """
    N, dN = _p2_shapes(_QUAD_BARY)
    d2N = _p2_second_derivs()                      # (6, 2, 2) constant
    X = space.nodes[space.tri_dofs]                # (nt, 6, 2)
    nt = len(space.tri_dofs)
    nq = len(_QUAD_BARY)
    T = np.einsum("tix,iab->txab", X, d2N)         # d J / d xi, constant
    out = np.zeros((nt, nq, 2, 2, 2))
    comps = np.stack([u[0::2][space.tri_dofs], u[1::2][space.tri_dofs]],
                     axis=-1)                      # (nt, 6, 2)
    for a in range(nq):
        J = np.einsum("tix,ib->txb", X, dN[a])
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1]
        Jinv[:, 0, 1] = -J[:, 0, 1]
        Jinv[:, 1, 0] = -J[:, 1, 0]
        Jinv[:, 1, 1] = J[:, 0, 0]
        Jinv /= det[:, None, None]                 # Jinv[a, x]
        # d(Jinv)/dx_beta = -Jinv dJ/dxi_c Jinv * Jinv[c, beta]
        dJinv = -np.einsum("tag,tgbc,tbh,tcB->tahB", Jinv, T, Jinv, Jinv,
                           optimize=True)          # (nt, xi_a, x_h, x_B)
        # Hessian of shapes in x: d2N contracted twice with Jinv plus
        # gradient contracted with dJinv
        Hshape = (np.einsum("iab,taA,tbB->tiAB", d2N, Jinv, Jinv,
                            optimize=True)
                  + np.einsum("ia,taAB->tiAB", dN[a], dJinv, optimize=True))
        out[:, a] = np.einsum("tiAB,tik->tABk", Hshape, comps, optimize=True)
    return out.reshape(-1, 2, 2, 2)


def broken_h2_seminorm(space: MixedSpace, u) -> float:
    """Elementwise L2 norm of all second derivatives of the velocity."""
    H = velocity_hessian_at_quad(space, u)
    w = space.quad_wdet.ravel()
    return float(np.sqrt(np.einsum("q,qabk->", w, H**2)))


@dataclass
class RegularityReport:
    u_l2: float
    u_h1_semi: float
    u_h2_semi: float            # broken, elementwise second derivatives
    p_l2: float
    p_h1_semi: float
    f_l2: float

    @property
    def u_h1(self) -> float:
        return float(np.hypot(self.u_l2, self.u_h1_semi))

    @property
    def u_h2_broken(self) -> float:
        return float(np.sqrt(self.u_l2**2 + self.u_h1_semi**2
                             + self.u_h2_semi**2))

    @property
    def p_h1(self) -> float:
        return float(np.hypot(self.p_l2, self.p_h1_semi))

    @property
    def ratio(self) -> float:
        return (self.u_h1 + self.u_h2_broken + self.p_h1) / self.f_l2


def regularity_ratio(space: MixedSpace, u, p, f_at_quad) -> RegularityReport:
    """Elliptic regularity diagnostic.

    Measures the velocity in the full H1 norm and the broken H2 norm
    (second derivatives taken elementwise) and the pressure in the full H1
    norm, all against the L2 norm of the body force.
    """
    w = space.quad_wdet.ravel()
    F = np.asarray(f_at_quad)
    f_l2 = float(np.sqrt(np.einsum("q,qc->", w, F**2)))
    if f_l2 < 1e-14:
        raise ZeroLoad("regularity ratio undefined for vanishing load")
    uq = space.velocity_at_quad(u)
    u_l2 = float(np.sqrt(np.einsum("q,qc->", w, uq**2)))
    gu = space.velocity_grad_at_quad(u)
    u_h1 = float(np.sqrt(np.einsum("q,qmk->", w, gu**2)))
    pq = space.pressure_at_quad(p)
    p_l2 = float(np.sqrt(w @ pq**2))
    gp = space.pressure_grad_at_quad(p)
    p_h1 = float(np.sqrt(np.einsum("q,qc->", w, gp**2)))
    return RegularityReport(u_l2=u_l2, u_h1_semi=u_h1,
                            u_h2_semi=broken_h2_seminorm(space, u),
                            p_l2=p_l2, p_h1_semi=p_h1, f_l2=f_l2)
