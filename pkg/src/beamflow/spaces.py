"""Fractional norms, multiplier norms, and boundary extension operators.

Periodic fractional Sobolev norms are evaluated spectrally on the mode
coefficients. Boundary-to-domain extensions come in two flavors: a discrete
harmonic lift damped by the tubular cutoff on the reference domain, and the
mollifier-based half-space extension used for rough-graph experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .discretization import MixedSpace
from .errors import (
    DegenerateJacobian,
    LinearSolveFailure,
    PowerIterationStall,
    ScaleTooSmall,
)
from .fourier import TWO_PI, PeriodicField
from .geometry import ReferenceGeometry, degeneracy_check, hanzawa_inverse, tube_frame

__all__ = [
    "fractional_norm",
    "multiplier_norm_estimate",
    "extend_boundary_to_domain",
    "ExtendedField",
    "extend_F_eta",
    "HalfSpaceExtension",
    "build_half_space_extension",
    "mollifier",
    "mollifier_derivative",
]

_S_MAX = 8.0


def _mode_weights(ks: np.ndarray, s: float) -> np.ndarray:
    """Spectral weights 1 + (2 pi |k|)^(2s); plain weights at s = 0."""
    if s == 0.0:
        return np.ones_like(ks, dtype=float)
    w = np.ones_like(ks, dtype=float)
    nz = ks != 0
    w[nz] += (TWO_PI * np.abs(ks[nz])) ** (2.0 * s)
    return w


def fractional_norm(f: PeriodicField, s: float) -> float:
    """Sobolev norm of fractional order ``s >= 0`` of a periodic field.

    Computed spectrally as (sum_k (1 + (2 pi |k|)^(2s)) |f_k|^2)^(1/2),
    which reduces to the plain L2 norm at s = 0.
    """
    if not 0.0 <= s <= _S_MAX:
        raise ValueError(f"norm order s={s} outside [0, {_S_MAX}]")
    ks = np.arange(f.max_mode + 1)
    w = _mode_weights(ks, s)
    e = np.abs(f.coeffs) ** 2
    # half-spectrum storage: modes k and -k contribute equally
    total = w[0] * e[0] + 2.0 * (w[1:] @ e[1:])
    return float(np.sqrt(total))


def _convolution_matrix(g: PeriodicField, k_max: int) -> np.ndarray:
    """Dense matrix of v -> g * v on modes -k_max..k_max (truncated)."""
    size = 2 * k_max + 1
    full = np.zeros(2 * g.max_mode + 1, dtype=complex)
    full[g.max_mode] = g.coeffs[0]
    for k in range(1, g.max_mode + 1):
        full[g.max_mode + k] = g.coeffs[k]
        full[g.max_mode - k] = np.conj(g.coeffs[k])
    A = np.zeros((size, size), dtype=complex)
    for j in range(-k_max, k_max + 1):
        for k in range(-k_max, k_max + 1):
            d = j - k
            if abs(d) <= g.max_mode:
                A[j + k_max, k + k_max] = full[d + g.max_mode]
    return A


def multiplier_norm_estimate(phi: PeriodicField, s: float, k_max: int,
                             tol: float = 1e-8, max_iter: int = 10000,
                             seed: int = 0) -> float:
    """Operator norm of v -> (d phi / dy) v on the truncated W^(s-1,2) space.

    The norm is the largest singular value of the weighted, truncated
    convolution matrix, found by power iteration on its normal matrix with
    a deterministic seeded start.
    """
    if s < 1.0:
        raise ValueError(f"multiplier order s={s} must be at least 1")
    g = phi.derivative(1)
    if np.abs(g.coeffs).max() == 0.0:
        return 0.0
    A = _convolution_matrix(g, k_max)
    ks = np.arange(-k_max, k_max + 1)
    w = np.sqrt(_mode_weights(ks, s - 1.0))
    B = (w[:, None] * A) / w[None, :]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(len(B)) + 1j * rng.standard_normal(len(B))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        q = B.conj().T @ (B @ v)
        nq = np.linalg.norm(q)
        if nq == 0.0:
            return 0.0
        v_new = q / nq
        change = abs(nq - lam) / max(nq, 1e-300)
        lam = nq
        v = v_new
        if change <= tol:
            return float(np.sqrt(lam))
    raise PowerIterationStall(
        f"power iteration did not settle within {max_iter} iterations")


# ---------------------------------------------------------------------------
# boundary-to-domain extension on the reference mesh
# ---------------------------------------------------------------------------

def extend_boundary_to_domain(space: MixedSpace, b: PeriodicField,
                              ops=None) -> np.ndarray:
    """Velocity field whose boundary trace is ``b(y) n(y)``.

    The interior carries the componentwise discrete harmonic extension of
    the trace data, damped by the tubular cutoff so the field vanishes away
    from the boundary. Returns interleaved velocity dofs.
    """
    if ops is None:
        ops = space.assemble()
    yb = space.boundary_dof_params
    _, _, _, nor, _ = space.geometry.frame(yb)
    bv = b.eval(yb)
    lift = np.zeros(space.n_velocity)
    lift[2 * space.boundary_scalar_dofs] = bv * nor[:, 0]
    lift[2 * space.boundary_scalar_dofs + 1] = bv * nor[:, 1]
    if np.abs(bv).max() == 0.0:
        return lift

    bd = space.boundary_velocity_dofs
    interior = np.setdiff1d(np.arange(space.n_velocity), bd)
    K_ii = ops.K[interior][:, interior].tocsc()
    K_ib = ops.K[interior][:, bd]
    sol = spla.spsolve(K_ii, -K_ib @ lift[bd])
    if not np.all(np.isfinite(sol)):
        raise LinearSolveFailure("harmonic extension solve failed")
    out = lift.copy()
    out[interior] = sol

    frame = tube_frame(space.geometry, space.nodes)
    chi = np.zeros(space.n_scalar)
    chi[frame.in_tube] = space.geometry.cutoff.chi(frame.s)
    out[0::2] *= chi
    out[1::2] *= chi
    return out


@dataclass
class ExtendedField:
    """Boundary extension carried on the reference mesh.

    ``dofs`` holds the reference-domain finite element vector; values on
    the displaced domain are obtained by composing with the inverse
    displacement map.
    """

    space: MixedSpace
    geometry: ReferenceGeometry
    eta: PeriodicField
    dofs: np.ndarray

    def values_at_reference(self, points) -> np.ndarray:
        return self.space.velocity_at_points(self.dofs, points)

    def values_at_deformed(self, points) -> np.ndarray:
        ref = hanzawa_inverse(self.geometry, self.eta, points)
        return self.space.velocity_at_points(self.dofs, ref)

    def pushed_quad_points(self) -> np.ndarray:
        from .geometry import hanzawa

        return hanzawa(self.geometry, self.eta, self.space.quad_points)


def extend_F_eta(space: MixedSpace, eta: PeriodicField, b: PeriodicField,
                 ops=None) -> ExtendedField:
    """Extension of ``b n`` to the displaced domain.

    Realized as the reference-domain extension composed with the inverse
    displacement map, so the trace on the displaced boundary remains
    ``b(y) n(y)`` up to boundary interpolation error.
    """
    report = degeneracy_check(space.geometry, eta)
    if not report.ok:
        raise DegenerateJacobian(
            "displacement fails the fiber degeneracy margins")
    dofs = extend_boundary_to_domain(space, b, ops=ops)
    return ExtendedField(space=space, geometry=space.geometry, eta=eta,
                         dofs=dofs)


# ---------------------------------------------------------------------------
# half-space mollifier extension
# ---------------------------------------------------------------------------

def mollifier(u) -> np.ndarray:
    """C2 bump (35/32)(1 - u^2)^3 on (-1, 1), unit mass."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    out[m] = (35.0 / 32.0) * (1.0 - u[m] ** 2) ** 3
    return out


def mollifier_derivative(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    out[m] = -(105.0 / 16.0) * u[m] * (1.0 - u[m] ** 2) ** 2
    return out


@dataclass
class HalfSpaceExtension:
    """Mollified graph extension on a periodic half-space grid.

    The vertical map is z_n -> z_n + T(z', z_n / scale) where T mollifies
    the graph at width equal to its second argument. Its Jacobian
    determinant stays within [1 - k_lip / scale, 1 + k_lip / scale].
    """

    zp: np.ndarray              # (n,) periodic horizontal grid on [0, 1)
    zn: np.ndarray              # (m,) vertical grid on (0, 1]
    values: np.ndarray          # (m, n) mollified field T(z', zn / scale)
    det: np.ndarray             # (m, n) Jacobian determinant of the map
    phi: np.ndarray             # (n,) graph samples
    k_lip: float
    scale: float

    def map_height(self) -> np.ndarray:
        """Vertical component of the map on the grid, shape (m, n)."""
        return self.zn[:, None] + self.values

    def boundary_values(self) -> np.ndarray:
        """Limit of the extension at zero height: the graph itself."""
        return self.phi.copy()


def _periodic_interp(phi: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = len(phi)
    t = (x % 1.0) * n
    i0 = np.floor(t).astype(int) % n
    frac = t - np.floor(t)
    i1 = (i0 + 1) % n
    return phi[i0] * (1.0 - frac) + phi[i1] * frac


def _periodic_slope(phi: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = len(phi)
    i0 = np.floor((x % 1.0) * n).astype(int) % n
    i1 = (i0 + 1) % n
    return (phi[i1] - phi[i0]) * n


def build_half_space_extension(phi_samples, k_lip: float, scale: float,
                               levels: int = 48,
                               quad_points: int = 257) -> HalfSpaceExtension:
    """Extend a periodic Lipschitz graph into the half space above it.

    ``phi_samples`` holds graph values on the uniform periodic grid i / n.
    The graph is mollified at width z_n / ``scale`` with a compactly
    supported bump; the resulting vertical map z_n + T has Jacobian
    determinant inside [1 - k_lip / scale, 1 + k_lip / scale] whenever the
    samples really are ``k_lip``-Lipschitz. ScaleTooSmall signals a
    violated bound.
    """
    phi = np.asarray(phi_samples, dtype=float)
    if phi.ndim != 1 or len(phi) < 4:
        raise ValueError("graph samples must be a vector of length >= 4")
    if scale <= 0 or k_lip < 0:
        raise ValueError("scale must be positive and k_lip nonnegative")
    n = len(phi)
    m = levels
    zp = np.arange(n) / n
    zn = np.arange(1, m + 1) / m

    u = np.linspace(-1.0, 1.0, quad_points)
    wq = np.full(quad_points, u[1] - u[0])
    wq[0] *= 0.5
    wq[-1] *= 0.5
    zeta = mollifier(u)
    mass = wq @ zeta
    wz = wq * zeta / mass           # normalized: exact unit mass discretely

    T = np.zeros((m, n))
    dT = np.zeros((m, n))
    for j, t in enumerate(zn / scale):
        # args shape (quad, n): horizontal positions z' - t u
        args = zp[None, :] - t * u[:, None]
        T[j] = wz @ _periodic_interp(phi, args.ravel()).reshape(
            quad_points, n)
        dT[j] = -(wz * u) @ _periodic_slope(phi, args.ravel()).reshape(
            quad_points, n)

    det = 1.0 + dT / scale
    lo = 1.0 - k_lip / scale
    hi = 1.0 + k_lip / scale
    pad = 1e-12 * (1.0 + abs(hi))
    if det.min() < lo - pad or det.max() > hi + pad:
        raise ScaleTooSmall(
            f"determinant range [{det.min():.4f}, {det.max():.4f}] leaves "
            f"[{lo:.4f}, {hi:.4f}]; increase the scale or revisit k_lip")
    height = zn[:, None] + T
    rows = np.vstack([phi[None, :], height])
    if np.any(np.diff(rows, axis=0) <= 0.0):
        raise ScaleTooSmall("vertical map is not monotone along columns")
    return HalfSpaceExtension(zp=zp, zn=zn, values=T, det=det, phi=phi,
                              k_lip=float(k_lip), scale=float(scale))
