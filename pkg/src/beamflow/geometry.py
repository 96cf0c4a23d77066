"""Reference geometry and the boundary-displacement transform.

The reference domain is bounded by a closed curve given in Fourier form.
Points in a tubular strip of half-width ``L`` around the boundary carry
normal coordinates ``(y, s)`` (nearest boundary parameter and signed
distance, negative inside). The displacement map shifts each normal fiber
by the beam displacement ``eta`` damped with a cutoff in ``s`` so the map
is the identity at depth ``L``. All coefficient fields of the transformed
fluid system are evaluated here in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousProjection,
    DegenerateJacobian,
    DisplacementTooLarge,
    NewtonDivergence,
    OutOfTube,
    WindowTooLarge,
)
from .fourier import PeriodicField

__all__ = [
    "ReferenceGeometry",
    "BoundaryDisplacement",
    "CutoffProfile",
    "TubeFrame",
    "HanzawaField",
    "DegeneracyReport",
    "Chart",
    "hanzawa",
    "hanzawa_inverse",
    "coefficient_fields",
    "fields_from_frame",
    "tube_frame",
    "degeneracy_check",
    "self_intersection_check",
    "local_chart",
    "chart_lipschitz",
]

_SEG_EPS = 1e-12
_DET_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# cutoff profile
# ---------------------------------------------------------------------------

class CutoffProfile:
    """Piecewise-quintic cutoff in the signed distance ``s``.

    Equals 1 on ``[-0.1 L, infinity)`` and 0 on ``(-infinity, -0.9 L]``.
    The derivative ramps with quartic ends to a plateau chosen so that
    ``sup |chi'| = 1.3 / L`` exactly, the smallest slope cap compatible
    with the plateau widths, keeping the fiber maps monotone for
    displacements up to ``L / 1.3``.
    """

    def __init__(self, L: float):
        self.L = float(L)
        self.s1 = -0.1 * self.L
        self.s0 = -0.9 * self.L
        self.slope = 1.3 / self.L
        width = self.s1 - self.s0
        # quartic ramp t^2 (2-t)^2 integrates to 8/15; the ramp width makes
        # the derivative integrate to exactly 1
        self.ramp = (15.0 / 14.0) * (width - 1.0 / self.slope)
        if not 0.0 < self.ramp < 0.5 * width:
            raise ValueError("cutoff ramp width out of range")

    @staticmethod
    def _ramp_shape(t):
        return t * t * (2.0 - t) ** 2

    @staticmethod
    def _ramp_integral(t):
        return (4.0 / 3.0) * t**3 - t**4 + 0.2 * t**5

    def chi(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        m, wr, s0, s1 = self.slope, self.ramp, self.s0, self.s1
        out[s >= s1] = 1.0
        rise = (s > s0) & (s < s0 + wr)
        out[rise] = m * wr * self._ramp_integral((s[rise] - s0) / wr)
        mid = (s >= s0 + wr) & (s <= s1 - wr)
        out[mid] = m * wr * self._ramp_integral(1.0) + m * (s[mid] - s0 - wr)
        fall = (s > s1 - wr) & (s < s1)
        out[fall] = 1.0 - m * wr * self._ramp_integral((s1 - s[fall]) / wr)
        return out

    def dchi(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        m, wr, s0, s1 = self.slope, self.ramp, self.s0, self.s1
        rise = (s > s0) & (s < s0 + wr)
        out[rise] = m * self._ramp_shape((s[rise] - s0) / wr)
        mid = (s >= s0 + wr) & (s <= s1 - wr)
        out[mid] = m
        fall = (s > s1 - wr) & (s < s1)
        out[fall] = m * self._ramp_shape((s1 - s[fall]) / wr)
        return out


# ---------------------------------------------------------------------------
# reference geometry
# ---------------------------------------------------------------------------

class ReferenceGeometry:
    """Closed Fourier boundary curve with a tubular strip of half-width L.

    Parameters
    ----------
    curve_x, curve_y : PeriodicField
        Components of the boundary parametrization ``phi`` on [0, 1),
        oriented counterclockwise.
    tube_width : float
        Half-width ``L`` of the strip carrying normal coordinates.
    displacement_margin : float, optional
        Admissible sup bound ``alpha`` for displacements; default ``0.5 L``.
    """

    def __init__(self, curve_x: PeriodicField, curve_y: PeriodicField,
                 tube_width: float, displacement_margin: float | None = None,
                 validation_samples: int = 1024):
        self.curve_x = curve_x
        self.curve_y = curve_y
        self.L = float(tube_width)
        if self.L <= 0:
            raise ValueError("tube_width must be positive")
        self.alpha = 0.5 * self.L if displacement_margin is None else float(displacement_margin)
        if not 0 < self.alpha < self.L:
            raise ValueError("displacement margin must lie in (0, L)")
        self.cutoff = CutoffProfile(self.L)
        self._seed_n = 256
        self._seed_y = np.arange(self._seed_n) / self._seed_n
        self._seed_pts = self.curve(self._seed_y)
        self._validate(validation_samples)

    # -- constructors ---------------------------------------------------
    @classmethod
    def circle(cls, radius: float = 1.0, center=(0.0, 0.0),
               tube_width: float = 0.5, **kw) -> "ReferenceGeometry":
        cx = PeriodicField([center[0], radius / 2.0])
        cy = PeriodicField([center[1], radius / 2j])
        return cls(cx, cy, tube_width, **kw)

    @classmethod
    def ellipse(cls, a: float, b: float, center=(0.0, 0.0),
                tube_width: float = 0.3, **kw) -> "ReferenceGeometry":
        cx = PeriodicField([center[0], a / 2.0])
        cy = PeriodicField([center[1], b / 2j])
        return cls(cx, cy, tube_width, **kw)

    # -- curve evaluation -------------------------------------------------
    def curve(self, y, deriv: int = 0) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.stack([self.curve_x.eval(y, deriv), self.curve_y.eval(y, deriv)], axis=-1)

    def frame(self, y):
        """Point, speed ``|phi'|``, unit tangent, outward normal, curvature."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        p = self.curve(y)
        d1 = self.curve(y, 1)
        d2 = self.curve(y, 2)
        g = np.linalg.norm(d1, axis=-1)
        tau = d1 / g[..., None]
        nor = np.stack([tau[..., 1], -tau[..., 0]], axis=-1)
        kap = (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]) / g**3
        return p, g, tau, nor, kap

    def perimeter(self, n: int = 4096) -> float:
        y = np.arange(n) / n
        return float(np.linalg.norm(self.curve(y, 1), axis=1).mean())

    def arclength_params(self, count: int, n_fine: int = 4096) -> np.ndarray:
        """Parameters of ``count`` points equally spaced in arclength."""
        y = np.arange(n_fine) / n_fine
        speed = np.linalg.norm(self.curve(y, 1), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(speed) / n_fine])
        targets = np.arange(count) * arc[-1] / count
        return np.interp(targets, arc, np.concatenate([y, [1.0]]))

    # -- validation -------------------------------------------------------
    def _validate(self, n: int):
        y = np.arange(n) / n
        p, g, _, _, kap = self.frame(y)
        if g.min() <= 0 or not np.all(np.isfinite(g)):
            raise ValueError("curve parametrization is degenerate")
        q = np.roll(p, -1, axis=0)
        area2 = (p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]).sum()
        if area2 <= 0:
            raise ValueError("curve must be oriented counterclockwise")
        reach_kappa = 1.0 / max(np.abs(kap).max(), 1e-30)
        # bottleneck: half the closest approach between sheets that double
        # back, i.e. pairs whose chord is much shorter than the arc between
        # them (convex curves have none and are governed by curvature alone)
        arc = np.concatenate([[0.0], np.cumsum(g) / n])
        arc_ij = np.abs(np.subtract.outer(arc[:-1], arc[:-1]))
        arc_ij = np.minimum(arc_ij, arc[-1] - arc_ij)
        chord = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        doubling = chord < 0.5 * arc_ij
        bottleneck = 0.5 * chord[doubling].min() if doubling.any() else np.inf
        self.reach_estimate = float(min(reach_kappa, bottleneck))
        if self.L > self.reach_estimate * (1.0 + 1e-9):
            raise ValueError(
                f"tube half-width {self.L} exceeds estimated reach "
                f"{self.reach_estimate:.6g}; normal coordinates would fold")

    # -- tubular coordinates ----------------------------------------------
    def _newton_project(self, X, y0, maxit=60, tol=1e-14):
        y = y0.copy()
        step_cap = 2.0 / self._seed_n
        converged = np.zeros(len(y), dtype=bool)
        for _ in range(maxit):
            p = self.curve(y)
            d1 = self.curve(y, 1)
            d2 = self.curve(y, 2)
            r = X - p
            f = (r * d1).sum(-1)
            fp = (r * d2).sum(-1) - (d1 * d1).sum(-1)
            fp = np.where(np.abs(fp) < 1e-30, -1e-30, fp)
            step = f / fp
            step = np.clip(step, -step_cap, step_cap)
            y = (y - step) % 1.0
            converged = np.abs(step) < tol
            if converged.all():
                break
        return y, converged

    def project_batch(self, points, check_ambiguity: bool = True,
                      chunk: int = 8192):
        """Normal coordinates for an array of points.

        Returns ``(y, s, dist)`` with ``s`` the signed distance (negative
        inside the domain) and ``dist = |s|``; no tube restriction applied.
        Points are processed in chunks to bound the seed-distance workspace.
        """
        X = np.atleast_2d(np.asarray(points, dtype=float))
        out_y = np.empty(len(X))
        out_s = np.empty(len(X))
        out_d = np.empty(len(X))
        for lo in range(0, len(X), chunk):
            sl = slice(lo, min(lo + chunk, len(X)))
            y, s, d = self._project_chunk(X[sl], check_ambiguity)
            out_y[sl], out_s[sl], out_d[sl] = y, s, d
        return out_y, out_s, out_d

    def _project_chunk(self, X, check_ambiguity):
        n = self._seed_n
        d2 = ((X[:, None, :] - self._seed_pts[None]) ** 2).sum(-1)
        best = np.argmin(d2, axis=1)
        y1, ok1 = self._newton_project(X, self._seed_y[best])
        if not ok1.all():
            raise NewtonDivergence("projection Newton failed to converge")
        p1 = self.curve(y1)
        dist1 = np.linalg.norm(X - p1, axis=1)
        if check_ambiguity:
            # polish from the best seed outside a neighbourhood of the first;
            # a genuine distance tie flags a fold of the normal fibers
            halo = max(4, n // 32)
            idx = np.arange(n)
            sep = np.abs(idx[None, :] - best[:, None])
            sep = np.minimum(sep, n - sep)
            d2_masked = np.where(sep > halo, d2, np.inf)
            alt = np.argmin(d2_masked, axis=1)
            y2, _ = self._newton_project(X, self._seed_y[alt])
            p2 = self.curve(y2)
            dist2 = np.linalg.norm(X - p2, axis=1)
            ysep = np.abs(y1 - y2)
            ysep = np.minimum(ysep, 1.0 - ysep)
            ties = (np.abs(dist1 - dist2) < 1e-9 * (1.0 + dist1)) & (ysep > 1e-6)
            inside_tube = dist1 < self.L + 1e-12
            if np.any(ties & inside_tube):
                k = int(np.argmax(ties & inside_tube))
                raise AmbiguousProjection(
                    f"point {X[k]} has two nearest-parameter candidates "
                    f"y={y1[k]:.6f} and y={y2[k]:.6f}")
            closer = dist2 < dist1 - 1e-12
            y1 = np.where(closer, y2, y1)
            p1 = np.where(closer[:, None], p2, p1)
            dist1 = np.where(closer, dist2, dist1)
        _, _, _, nor, _ = self.frame(y1)
        s = ((X - p1) * nor).sum(-1)
        return y1, s, dist1

    def tubular_coordinates(self, x):
        """Normal coordinates ``(y, s)`` of a single point in the strip."""
        y, s, dist = self.project_batch(np.asarray(x, dtype=float)[None, :])
        if dist[0] >= self.L:
            raise OutOfTube(f"point {x} at distance {dist[0]:.6g} >= L={self.L}")
        return float(y[0]), float(s[0])


# ---------------------------------------------------------------------------
# boundary displacement
# ---------------------------------------------------------------------------

@dataclass
class BoundaryDisplacement:
    """Beam displacement and velocity at one time instant."""

    eta: PeriodicField
    velocity: PeriodicField
    time: float = 0.0

    def validate(self, geometry: ReferenceGeometry, margin: float | None = None):
        bound = geometry.L if margin is None else margin
        sup = self.eta.sup_norm()
        if sup >= bound:
            raise DisplacementTooLarge(
                f"sup |eta| = {sup:.6g} exceeds admissible bound {bound:.6g}")
        return sup


# ---------------------------------------------------------------------------
# tube frame and coefficient fields
# ---------------------------------------------------------------------------

@dataclass
class TubeFrame:
    """Displacement-independent normal-coordinate data at fixed points.

    Caching this once per mesh makes re-evaluating coefficient fields for
    each new displacement a few dense mode evaluations.
    """

    points: np.ndarray          # (n, 2)
    in_tube: np.ndarray         # (n,) bool
    y: np.ndarray               # (m,) parameters, tube points only
    s: np.ndarray               # (m,) signed distances
    g: np.ndarray               # (m,) |phi'|
    tau: np.ndarray             # (m, 2)
    nor: np.ndarray             # (m, 2)
    kap: np.ndarray             # (m,)
    chi: np.ndarray             # (m,)
    dchi: np.ndarray            # (m,)
    geometry: ReferenceGeometry = field(repr=False)


def tube_frame(geometry: ReferenceGeometry, points) -> TubeFrame:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y, s, dist = geometry.project_batch(X)
    in_tube = dist < geometry.L
    ym = y[in_tube]
    sm = s[in_tube]
    _, g, tau, nor, kap = geometry.frame(ym)
    return TubeFrame(points=X, in_tube=in_tube, y=ym, s=sm, g=g, tau=tau,
                     nor=nor, kap=kap, chi=geometry.cutoff.chi(sm),
                     dchi=geometry.cutoff.dchi(sm), geometry=geometry)


@dataclass
class HanzawaField:
    """Transform data sampled at a fixed point set.

    ``grad`` uses the Jacobian convention ``grad[i, j] = d Psi_i / d x_j``.
    ``A = J Finv Finv^T`` contracts per-component gradients and
    ``B = J Finv`` contracts as ``sum_mj B[m, j] d_m u_j`` in the
    transformed divergence.
    """

    points: np.ndarray
    in_tube: np.ndarray
    psi: np.ndarray             # (n, 2)
    grad: np.ndarray            # (n, 2, 2)
    J: np.ndarray               # (n,)
    A: np.ndarray               # (n, 2, 2)
    B: np.ndarray               # (n, 2, 2)
    Finv: np.ndarray            # (n, 2, 2)
    dt_psi: np.ndarray | None = None   # (n, 2) when a beam velocity is given


def fields_from_frame(frame: TubeFrame, eta: PeriodicField,
                      eta_t: PeriodicField | None = None) -> HanzawaField:
    """Coefficient fields for displacement ``eta`` on a cached frame."""
    n = len(frame.points)
    psi = frame.points.copy()
    grad = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    J = np.ones(n)
    A = grad.copy()
    B = grad.copy()
    Finv = grad.copy()
    dt_psi = np.zeros((n, 2)) if eta_t is not None else None

    m = frame.in_tube
    if m.any():
        et = eta.eval(frame.y)
        etp = eta.eval(frame.y, 1)
        sig = frame.s + et * frame.chi
        p = frame.geometry.curve(frame.y)
        psi[m] = p + sig[:, None] * frame.nor

        m11 = (1.0 + sig * frame.kap) / (1.0 + frame.s * frame.kap)
        m21 = etp * frame.chi / (frame.g * (1.0 + frame.s * frame.kap))
        m22 = 1.0 + et * frame.dchi
        TT = np.einsum("ti,tj->tij", frame.tau, frame.tau)
        NT = np.einsum("ti,tj->tij", frame.nor, frame.tau)
        NN = np.einsum("ti,tj->tij", frame.nor, frame.nor)
        G = m11[:, None, None] * TT + m21[:, None, None] * NT + m22[:, None, None] * NN
        grad[m] = G

        det = m11 * m22
        if det.size and det.min() <= _DET_FLOOR:
            raise DegenerateJacobian(
                f"det grad Psi = {det.min():.3e} at parameter "
                f"y={frame.y[int(np.argmin(det))]:.4f}")
        J[m] = np.abs(det)

        Fi = np.empty_like(G)
        Fi[:, 0, 0] = G[:, 1, 1]
        Fi[:, 0, 1] = -G[:, 0, 1]
        Fi[:, 1, 0] = -G[:, 1, 0]
        Fi[:, 1, 1] = G[:, 0, 0]
        Fi /= det[:, None, None]
        Finv[m] = Fi
        B[m] = J[m][:, None, None] * Fi
        A[m] = J[m][:, None, None] * np.einsum("tab,tcb->tac", Fi, Fi)

        if eta_t is not None:
            w = eta_t.eval(frame.y)
            dt_psi[m] = (w * frame.chi)[:, None] * frame.nor

    return HanzawaField(points=frame.points, in_tube=frame.in_tube, psi=psi,
                        grad=grad, J=J, A=A, B=B, Finv=Finv, dt_psi=dt_psi)


def coefficient_fields(geometry: ReferenceGeometry, eta: PeriodicField, points,
                       eta_t: PeriodicField | None = None) -> HanzawaField:
    """Transform data at arbitrary points (builds a frame on the fly)."""
    _check_displacement(geometry, eta)
    return fields_from_frame(tube_frame(geometry, points), eta, eta_t)


def _check_displacement(geometry: ReferenceGeometry, eta: PeriodicField):
    sup = eta.sup_norm()
    if sup >= geometry.L:
        raise DisplacementTooLarge(
            f"sup |eta| = {sup:.6g} >= tube half-width {geometry.L}")
    return sup


# ---------------------------------------------------------------------------
# forward and inverse maps
# ---------------------------------------------------------------------------

def hanzawa(geometry: ReferenceGeometry, eta: PeriodicField, x):
    """Displacement map: identity outside the strip, fiber shift inside."""
    _check_displacement(geometry, eta)
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    fld = fields_from_frame(tube_frame(geometry, np.atleast_2d(X)), eta)
    return fld.psi[0] if single else fld.psi


def hanzawa_inverse(geometry: ReferenceGeometry, eta: PeriodicField, xhat,
                    tol: float = 1e-13, maxit: int = 80):
    """Invert the displacement map along normal fibers.

    The map sends each fiber to itself, so inversion reduces to a scalar
    root solve of ``s + eta(y) chi(s) = s_hat`` per point, solved with
    safeguarded Newton (bisection fallback on the bracketing interval).
    """
    _check_displacement(geometry, eta)
    X = np.atleast_2d(np.asarray(xhat, dtype=float))
    single = np.asarray(xhat).ndim == 1
    y, shat, dist = geometry.project_batch(X)
    out = X.copy()
    L = geometry.L
    cut = geometry.cutoff

    m = dist < L
    if m.any():
        ym, sh = y[m], shat[m]
        et = eta.eval(ym)
        lo = np.maximum(sh - np.abs(et), -L * np.ones_like(sh))
        hi = sh + np.abs(et)
        flo = lo + et * cut.chi(lo) - sh
        fhi = hi + et * cut.chi(hi) - sh
        if np.any(flo > 1e-12) or np.any(fhi < -1e-12):
            raise NewtonDivergence("inverse fiber solve lost its bracket")
        s = sh - et * cut.chi(sh)   # first guess
        s = np.clip(s, lo, hi)
        ftol = tol * (1.0 + np.abs(sh).max())
        for _ in range(maxit):
            # converge on the residual: the iterate may sit exactly on a
            # bracket endpoint, where step-based tests misfire
            f = s + et * cut.chi(s) - sh
            if np.max(np.abs(f)) < ftol:
                break
            fp = 1.0 + et * cut.dchi(s)
            if np.any(fp <= 0):
                raise NewtonDivergence("fiber map is not monotone; "
                                       "displacement too steep to invert")
            s_new = s - f / fp
            bad = (s_new < lo) | (s_new > hi)
            s_new[bad] = 0.5 * (lo[bad] + hi[bad])
            shrink_hi = f > 0
            hi = np.where(shrink_hi, s, hi)
            lo = np.where(~shrink_hi, s, lo)
            s = s_new
        else:
            resid = np.abs(s + et * cut.chi(s) - sh).max()
            if resid > 100 * ftol:
                raise NewtonDivergence(f"fiber Newton residual {resid:.3e}")
        p = geometry.curve(ym)
        _, _, _, nor, _ = geometry.frame(ym)
        out[m] = p + s[:, None] * nor
    return out[0] if single else out


# ---------------------------------------------------------------------------
# admissibility monitors
# ---------------------------------------------------------------------------

@dataclass
class DegeneracyReport:
    ok: bool
    min_speed: float            # min |d_y phi_eta|
    min_normal_alignment: float  # min n . n_eta
    displacement_margin: float   # L - sup |eta|
    reasons: list

    def __bool__(self):
        return self.ok


def _deformed_tangent_data(geometry: ReferenceGeometry, eta: PeriodicField, y):
    _, g, tau, nor, kap = geometry.frame(y)
    et = eta.eval(y)
    etp = eta.eval(y, 1)
    a = g * (1.0 + et * kap)
    speed = np.hypot(a, etp)
    return a, etp, speed, tau, nor, et


def degeneracy_check(geometry: ReferenceGeometry, eta: PeriodicField,
                     n_samples: int = 4096,
                     speed_fraction: float = 0.05,
                     alignment_floor: float = 0.05,
                     margin_fraction: float = 0.05) -> DegeneracyReport:
    """Margins of the deformed boundary against folding and pinching.

    Checks ``|d_y phi_eta|`` against a fraction of the reference speed,
    the alignment ``n . n_eta`` against a floor, and the sup of ``eta``
    against the tube half-width.
    """
    y = np.arange(n_samples) / n_samples
    a, _, speed, _, _, _ = _deformed_tangent_data(geometry, eta, y)
    align = a / speed
    g_ref = np.linalg.norm(geometry.curve(y, 1), axis=1)
    sup_eta = eta.sup_norm(n_samples)

    min_speed = float(speed.min())
    min_align = float(align.min())
    margin = float(geometry.L - sup_eta)
    reasons = []
    if min_speed <= speed_fraction * g_ref.min():
        reasons.append(f"deformed speed {min_speed:.3e} below threshold")
    if min_align <= alignment_floor:
        reasons.append(f"normal alignment {min_align:.3e} below floor")
    if margin <= margin_fraction * geometry.L:
        reasons.append(f"displacement margin {margin:.3e} below threshold")
    return DegeneracyReport(ok=not reasons, min_speed=min_speed,
                            min_normal_alignment=min_align,
                            displacement_margin=margin, reasons=reasons)


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper or touching intersection of segments (p1,p2) and (p3,p4)."""
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    if ((d1 > _SEG_EPS and d2 < -_SEG_EPS) or (d1 < -_SEG_EPS and d2 > _SEG_EPS)) and \
       ((d3 > _SEG_EPS and d4 < -_SEG_EPS) or (d3 < -_SEG_EPS and d4 > _SEG_EPS)):
        return True

    def on_segment(a, b, c):
        if abs(_cross2(b - a, c - a)) > _SEG_EPS:
            return False
        return (min(a[0], b[0]) - _SEG_EPS <= c[0] <= max(a[0], b[0]) + _SEG_EPS and
                min(a[1], b[1]) - _SEG_EPS <= c[1] <= max(a[1], b[1]) + _SEG_EPS)

    return (on_segment(p1, p2, p3) or on_segment(p1, p2, p4) or
            on_segment(p3, p4, p1) or on_segment(p3, p4, p2))


def deformed_polyline(geometry: ReferenceGeometry, eta: PeriodicField,
                      n: int) -> np.ndarray:
    y = np.arange(n) / n
    p, _, _, nor, _ = geometry.frame(y)
    return p + eta.eval(y)[:, None] * nor


def self_intersection_check(geometry: ReferenceGeometry, eta: PeriodicField,
                            n_check: int | None = None) -> bool:
    """True when the deformed boundary polyline crosses itself.

    Sweeps segments ordered by their minimal x coordinate and tests only
    pairs with overlapping x intervals; adjacent segments share an
    endpoint and are skipped.
    """
    k_max = max(eta.max_mode, geometry.curve_x.max_mode, geometry.curve_y.max_mode)
    n = n_check if n_check is not None else max(1024, 64 * k_max)
    pts = deformed_polyline(geometry, eta, n)
    seg_a = pts
    seg_b = np.roll(pts, -1, axis=0)
    xmin = np.minimum(seg_a[:, 0], seg_b[:, 0])
    xmax = np.maximum(seg_a[:, 0], seg_b[:, 0])
    order = np.argsort(xmin, kind="stable")
    xmin_o = xmin[order]
    for pos, i in enumerate(order):
        hi = xmax[i] + _SEG_EPS
        for pos2 in range(pos + 1, n):
            if xmin_o[pos2] > hi:
                break
            j = order[pos2]
            gap = abs(i - j)
            if min(gap, n - gap) <= 1:
                continue
            if _segments_intersect(seg_a[i], seg_b[i], seg_a[j], seg_b[j]):
                return True
    return False


def self_intersection_bruteforce(geometry: ReferenceGeometry, eta: PeriodicField,
                                 n: int) -> bool:
    """All-pairs oracle for the sweep check (quadratic, test use)."""
    pts = deformed_polyline(geometry, eta, n)
    seg_a = pts
    seg_b = np.roll(pts, -1, axis=0)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(seg_a[i], seg_b[i], seg_a[j], seg_b[j]):
                return True
    return False


# ---------------------------------------------------------------------------
# boundary charts
# ---------------------------------------------------------------------------

@dataclass
class Chart:
    """Rotated graph description of the deformed boundary near one point."""

    origin: np.ndarray          # point on the deformed boundary
    rotation: np.ndarray        # maps n_eta(y0) to (0, 1)
    y0: float
    window: float               # graph half-width in the rotated abscissa
    z: np.ndarray               # uniform abscissa grid, includes 0
    values: np.ndarray          # graph heights, values[z == 0] == 0
    y_range: tuple              # parameter interval realized by the window


def local_chart(geometry: ReferenceGeometry, eta: PeriodicField, y0: float,
                window: float, n_tab: int = 257) -> Chart:
    """Graph chart of the deformed boundary over the tangent line at ``y0``.

    Raises WindowTooLarge when the rotated abscissa stops being monotone
    before the requested half-width is reached.
    """
    _check_displacement(geometry, eta)
    y0 = float(y0) % 1.0
    p0, _, _, _, _ = geometry.frame(np.array([y0]))
    a0, etp0, speed0, tau0, nor0, et0 = _deformed_tangent_data(
        geometry, eta, np.array([y0]))
    x0 = p0[0] + et0[0] * nor0[0]
    n_eta = (a0[0] * nor0[0] - etp0[0] * tau0[0]) / speed0[0]
    Q = np.array([[n_eta[1], -n_eta[0]], [n_eta[0], n_eta[1]]])

    def z_of(y):
        y = np.atleast_1d(y)
        pp, _, _, nn, _ = geometry.frame(y)
        pos = pp + eta.eval(y)[:, None] * nn - x0
        return pos @ Q.T

    # the rotation fixes only the normal, so the deformed tangent may map
    # to either abscissa direction; orient the parameter march accordingly
    dphi0 = a0[0] * tau0[0] + etp0[0] * nor0[0]
    sgn = 1.0 if (Q @ dphi0)[0] > 0 else -1.0

    # march outward until the abscissa passes the window on both sides
    half = []
    for direction in (+1.0, -1.0):
        dy = direction * sgn * min(0.5 * window / speed0[0], 1e-3)
        ys = [y0]
        zs = [np.zeros(2)]
        guard = 0
        while True:
            guard += 1
            if guard > 200000 or abs(ys[-1] - y0) >= 1.0:
                raise WindowTooLarge(
                    f"window {window} not reachable from y0={y0}")
            y_next = ys[-1] + dy
            z_next = z_of(np.array([y_next % 1.0]))[0]
            if direction * (z_next[0] - zs[-1][0]) <= 0:
                raise WindowTooLarge(
                    f"abscissa not monotone near y={y_next % 1.0:.4f}; "
                    f"window {window} leaves the graph regime")
            ys.append(y_next)
            zs.append(z_next)
            if direction * z_next[0] >= window:
                break
        half.append((np.array(ys), np.array(zs)))

    from scipy.interpolate import CubicSpline

    ys_f, zs_f = half[0]
    ys_b, zs_b = half[1]
    ys_all = np.concatenate([ys_b[::-1], ys_f[1:]])
    zs_all = np.concatenate([zs_b[::-1], zs_f[1:]])
    z_grid = np.linspace(-window, window, n_tab)
    vals = CubicSpline(zs_all[:, 0], zs_all[:, 1])(z_grid)
    center = np.argmin(np.abs(z_grid))
    if abs(z_grid[center]) < 1e-14:
        vals[center] = 0.0
    return Chart(origin=x0, rotation=Q, y0=y0, window=window, z=z_grid,
                 values=vals, y_range=(float(ys_all[0] % 1.0), float(ys_all[-1] % 1.0)))


def chart_lipschitz(chart: Chart) -> float:
    """Sup of ``|d values / d z|`` by cubic-spline differentiation."""
    from scipy.interpolate import CubicSpline

    spl = CubicSpline(chart.z, chart.values)
    zf = np.linspace(chart.z[0], chart.z[-1], 8 * len(chart.z))
    return float(np.abs(spl(zf, 1)).max())
