"""Triangular meshes and the mixed velocity/pressure/beam discretization.

Velocities use quadratic elements with curved (isoparametric) boundary
edges, pressure uses linears on the same triangles, and the beam carries a
truncated Fourier basis on the periodic parameter. Assembly routines accept
coefficient fields sampled at the quadrature points so the same code path
serves both the plain Stokes operator and the transformed moving-domain
operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from matplotlib.path import Path
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshingFailure, PointLocationFailure
from .fourier import PeriodicField, real_mode_basis
from .geometry import ReferenceGeometry

__all__ = [
    "Mesh",
    "MixedSpace",
    "AssembledOperators",
    "PointLocation",
    "build_mesh",
    "mesh_quality",
    "inf_sup_constant",
    "mode_flux_weights",
]

# degree-5 rule with 7 points on the reference triangle (area 1/2)
_QW1 = 0.125939180544827
_QA1 = 0.101286507323456
_QW2 = 0.132394152788506
_QA2 = 0.470142064105115
_QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [1 - 2 * _QA1, _QA1, _QA1],
    [_QA1, 1 - 2 * _QA1, _QA1],
    [_QA1, _QA1, 1 - 2 * _QA1],
    [1 - 2 * _QA2, _QA2, _QA2],
    [_QA2, 1 - 2 * _QA2, _QA2],
    [_QA2, _QA2, 1 - 2 * _QA2],
])
_QUAD_W = 0.5 * np.array([0.225, _QW1, _QW1, _QW1, _QW2, _QW2, _QW2])


def _p2_shapes(bary):
    """Quadratic shape values and reference gradients at barycentric points.

    Node order per triangle: three vertices then midpoints of edges
    (0,1), (1,2), (2,0). Reference coordinates are (xi, eta) with
    lambda = (1 - xi - eta, xi, eta).
    """
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    N = np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=1)
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    dN = np.zeros((len(bary), 6, 2))
    for a in range(len(bary)):
        g0, g1, g2 = dl
        dN[a, 0] = (4 * l0[a] - 1) * g0
        dN[a, 1] = (4 * l1[a] - 1) * g1
        dN[a, 2] = (4 * l2[a] - 1) * g2
        dN[a, 3] = 4 * (l1[a] * g0 + l0[a] * g1)
        dN[a, 4] = 4 * (l2[a] * g1 + l1[a] * g2)
        dN[a, 5] = 4 * (l0[a] * g2 + l2[a] * g0)
    return N, dN


# ---------------------------------------------------------------------------
# mesh generation
# ---------------------------------------------------------------------------

@dataclass
class Mesh:
    """Straight-sided triangulation with an ordered boundary loop."""

    vertices: np.ndarray        # (np, 2)
    triangles: np.ndarray       # (nt, 3) CCW
    boundary_nodes: np.ndarray  # (nb,) vertex ids ordered along the curve
    boundary_params: np.ndarray  # (nb,) curve parameters of those vertices
    h: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def _triangulate(points, boundary_path):
    tri = Delaunay(points)
    simp = tri.simplices
    cent = points[simp].mean(axis=1)
    keep = boundary_path.contains_points(cent)
    simp = simp[keep]
    # counterclockwise orientation
    d1 = points[simp[:, 1]] - points[simp[:, 0]]
    d2 = points[simp[:, 2]] - points[simp[:, 0]]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    simp[flip, 1], simp[flip, 2] = simp[flip, 2], simp[flip, 1].copy()
    return simp


def _adjacency(n, simplices):
    e = np.concatenate([simplices[:, [0, 1]], simplices[:, [1, 2]],
                        simplices[:, [2, 0]]])
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    A = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    A.data[:] = 1.0  # collapse duplicate edges
    A.sum_duplicates()
    A.data[:] = np.minimum(A.data, 1.0)
    return A


def build_mesh(geometry: ReferenceGeometry, h: float, smooth_iters: int = 6,
               clearance: float = 0.7, n_fine: int = 4096) -> Mesh:
    """Triangulate the reference domain at target edge length ``h``.

    Boundary vertices are equally spaced in arclength; the interior starts
    from a hexagonal lattice clipped away from the boundary and is relaxed
    by Laplacian smoothing with re-triangulation between passes.
    """
    perim = geometry.perimeter(n_fine)
    nb = max(12, int(round(perim / h)))
    yb = geometry.arclength_params(nb, n_fine)
    bpts = geometry.curve(yb)
    path = Path(bpts)

    lo = bpts.min(axis=0) - h
    hi = bpts.max(axis=0) + h
    dy = h * np.sqrt(3) / 2
    rows = np.arange(lo[1], hi[1] + dy, dy)
    cand = []
    for r, ypos in enumerate(rows):
        xs = np.arange(lo[0] + (h / 2 if r % 2 else 0.0), hi[0] + h, h)
        cand.append(np.stack([xs, np.full_like(xs, ypos)], axis=1))
    cand = np.concatenate(cand)
    inside = path.contains_points(cand)
    cand = cand[inside]
    if len(cand):
        d, _ = cKDTree(bpts).query(cand)
        cand = cand[d > clearance * h]

    pts = np.vstack([bpts, cand])
    simp = _triangulate(pts, path)
    free = np.ones(len(pts), dtype=bool)
    free[:nb] = False
    for _ in range(smooth_iters):
        A = _adjacency(len(pts), simp)
        deg = np.asarray(A.sum(axis=1)).ravel()
        deg[deg == 0] = 1.0
        avg = A @ pts / deg[:, None]
        pts[free] = avg[free]
        simp = _triangulate(pts, path)

    # drop interior points that lost all triangles, keep boundary ids stable
    used = np.zeros(len(pts), dtype=bool)
    used[simp.ravel()] = True
    used[:nb] = True
    if not used.all():
        remap = -np.ones(len(pts), dtype=int)
        remap[used] = np.arange(used.sum())
        pts = pts[used]
        simp = remap[simp]

    mesh = Mesh(vertices=pts, triangles=simp, boundary_nodes=np.arange(nb),
                boundary_params=yb, h=h)
    _validate_mesh(mesh)
    return mesh


def _validate_mesh(mesh: Mesh):
    q = mesh_quality(mesh)
    if q < 15.0:
        raise MeshingFailure(f"minimum triangle angle {q:.2f} deg below 15")
    # every consecutive boundary pair must appear as a triangle edge
    edges = set()
    for t in mesh.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edges.add((min(t[a], t[b]), max(t[a], t[b])))
    nb = len(mesh.boundary_nodes)
    for i in range(nb):
        a, b = mesh.boundary_nodes[i], mesh.boundary_nodes[(i + 1) % nb]
        if (min(a, b), max(a, b)) not in edges:
            raise MeshingFailure(f"boundary edge {a}-{b} missing from mesh")


def mesh_quality(mesh: Mesh) -> float:
    """Minimum interior angle over all triangles, in degrees."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        na = np.linalg.norm(a, axis=1)
        nbn = np.linalg.norm(b, axis=1)
        cosang = np.clip((a * b).sum(1) / (na * nbn), -1.0, 1.0)
        angles.append(np.degrees(np.arccos(cosang)))
    return float(np.min(angles))


# ---------------------------------------------------------------------------
# mixed space
# ---------------------------------------------------------------------------

@dataclass
class AssembledOperators:
    """Sparse operators for one set of coefficient fields.

    Velocity degrees of freedom are interleaved as ``2 * node + component``.
    """

    M: sp.csr_matrix            # weighted velocity mass (J u, v)
    K: sp.csr_matrix            # gradient stiffness (A grad u_k, grad v_k)
    D: sp.csr_matrix            # divergence rows (q, B : grad u)
    Mp: sp.csr_matrix           # pressure mass
    Kp: sp.csr_matrix           # pressure stiffness (grad q, grad r)


class MixedSpace:
    """Quadratic velocity / linear pressure pair on a curved-boundary mesh.

    Parameters
    ----------
    geometry : ReferenceGeometry
    mesh : Mesh
    beam_modes : int
        Requested Fourier truncation for the beam; capped at a quarter of
        the boundary vertex count so the trace stays resolvable.
    """

    def __init__(self, geometry: ReferenceGeometry, mesh: Mesh,
                 beam_modes: int = 16):
        self.geometry = geometry
        self.mesh = mesh
        self.k_max = int(min(beam_modes, len(mesh.boundary_nodes) // 4))
        self._build_p2()
        self._build_quad_cache()

    # -- construction ---------------------------------------------------
    def _build_p2(self):
        mesh = self.mesh
        nb = len(mesh.boundary_nodes)
        nv = mesh.n_vertices
        edge_ids = {}
        tri_edges = np.zeros((mesh.n_triangles, 3), dtype=int)
        for t, tri in enumerate(mesh.triangles):
            for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                if key not in edge_ids:
                    edge_ids[key] = len(edge_ids)
                tri_edges[t, k] = edge_ids[key]
        n_edges = len(edge_ids)
        mid = np.zeros((n_edges, 2))
        for (a, b), e in edge_ids.items():
            mid[e] = 0.5 * (mesh.vertices[a] + mesh.vertices[b])

        # snap midpoints of boundary edges onto the curve at the midpoint
        # parameter; these edges make the elements isoparametric
        self.boundary_edge_params = {}
        ybv = mesh.boundary_params
        for i in range(nb):
            a = mesh.boundary_nodes[i]
            b = mesh.boundary_nodes[(i + 1) % nb]
            ya = ybv[i]
            dyp = (ybv[(i + 1) % nb] - ya) % 1.0
            ym = (ya + 0.5 * dyp) % 1.0
            key = (min(a, b), max(a, b))
            e = edge_ids[key]
            mid[e] = self.geometry.curve(np.array([ym]))[0]
            self.boundary_edge_params[key] = ym

        self.nodes = np.vstack([mesh.vertices, mid])
        self.tri_dofs = np.hstack([mesh.triangles, nv + tri_edges])
        self.n_scalar = len(self.nodes)
        self.n_velocity = 2 * self.n_scalar
        self.n_pressure = nv
        self.n_beam = 2 * self.k_max + 1

        # boundary scalar dofs ordered by curve parameter (vertices and
        # snapped midpoints interleaved)
        entries = [(ybv[i], mesh.boundary_nodes[i]) for i in range(nb)]
        for i in range(nb):
            a = mesh.boundary_nodes[i]
            b = mesh.boundary_nodes[(i + 1) % nb]
            key = (min(a, b), max(a, b))
            entries.append((self.boundary_edge_params[key], nv + edge_ids[key]))
        entries.sort()
        self.boundary_dof_params = np.array([e[0] for e in entries])
        self.boundary_scalar_dofs = np.array([e[1] for e in entries], dtype=int)

    def _build_quad_cache(self):
        N, dN = _p2_shapes(_QUAD_BARY)
        X = self.nodes[self.tri_dofs]              # (nt, 6, 2)
        nt = len(self.tri_dofs)
        nq = len(_QUAD_BARY)
        self.quad_shape = N                        # (nq, 6)
        self.pressure_shape = _QUAD_BARY           # (nq, 3) barycentric
        grads = np.zeros((nq, nt, 6, 2))
        pgrads = np.zeros((nq, nt, 3, 2))
        wdet = np.zeros((nt, nq))
        qp = np.zeros((nt, nq, 2))
        dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        for a in range(nq):
            J = np.einsum("tia,ib->tab", X, dN[a])
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if det.min() <= 0:
                raise MeshingFailure("inverted isoparametric element")
            Jinv = np.empty_like(J)
            Jinv[:, 0, 0] = J[:, 1, 1]
            Jinv[:, 0, 1] = -J[:, 0, 1]
            Jinv[:, 1, 0] = -J[:, 1, 0]
            Jinv[:, 1, 1] = J[:, 0, 0]
            Jinv /= det[:, None, None]
            grads[a] = np.einsum("ia,tab->tib", dN[a], Jinv)
            pgrads[a] = np.einsum("ia,tab->tib", dl, Jinv)
            wdet[:, a] = _QUAD_W[a] * det
            qp[:, a, :] = np.einsum("i,tix->tx", N[a], X)
        self.quad_grads = grads
        self.pressure_grads = pgrads
        self.quad_wdet = wdet                      # (nt, nq)
        self.quad_points = qp.reshape(-1, 2)       # (nt * nq, 2)

    # -- assembly ---------------------------------------------------------
    def _scalar_matrix(self, cell_mats, width):
        nt = len(self.tri_dofs)
        dofs = self.tri_dofs[:, :width] if width == 6 else self.mesh.triangles
        rows = np.repeat(dofs, width, axis=1).ravel()
        cols = np.tile(dofs, (1, width)).ravel()
        size = self.n_scalar if width == 6 else self.n_pressure
        return sp.coo_matrix((cell_mats.ravel(), (rows, cols)),
                             shape=(size, size)).tocsr()

    def assemble(self, field=None) -> AssembledOperators:
        """Build operators, optionally weighted by transform fields.

        ``field`` is a HanzawaField evaluated at ``self.quad_points`` (in
        the same ordering); ``None`` means identity coefficients.
        """
        nt = len(self.tri_dofs)
        nq = len(_QUAD_BARY)
        if field is None:
            Jq = np.ones((nt, nq))
            Aq = np.broadcast_to(np.eye(2), (nt, nq, 2, 2))
            Bq = Aq
        else:
            Jq = field.J.reshape(nt, nq)
            Aq = field.A.reshape(nt, nq, 2, 2)
            Bq = field.B.reshape(nt, nq, 2, 2)

        w = self.quad_wdet                       # (nt, nq)
        N = self.quad_shape                      # (nq, 6)
        G = self.quad_grads                      # (nq, nt, 6, 2)
        lam = self.pressure_shape                # (nq, 3)
        GP = self.pressure_grads                 # (nq, nt, 3, 2)

        M_cell = np.einsum("ta,ta,ai,aj->tij", w, Jq, N, N, optimize=True)
        # stiffness with matrix coefficient: g_i . (A g_j)
        K_cell = np.einsum("ta,atim,tamn,atjn->tij", w, G, Aq, G, optimize=True)
        M = sp.kron(self._scalar_matrix(M_cell, 6), sp.eye(2), format="csr")
        K = sp.kron(self._scalar_matrix(K_cell, 6), sp.eye(2), format="csr")

        # divergence rows: (q, sum_mj B_mj d_m u_j); columns interleaved
        rows_p = np.repeat(self.mesh.triangles, 6, axis=1)
        data = []
        rows = []
        cols = []
        for c in range(2):
            # contraction over the gradient index with column c of B
            Dc = np.einsum("ta,ap,tam,atim->tpi", w, lam, Bq[:, :, :, c], G,
                           optimize=True)
            rows.append(rows_p.ravel())
            cols.append((2 * np.tile(self.tri_dofs, (1, 3)) + c).ravel())
            data.append(Dc.reshape(nt, -1).ravel())
        D = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_pressure, self.n_velocity)).tocsr()

        Mp_cell = np.einsum("ta,ap,aq->tpq", w, lam, lam, optimize=True)
        Kp_cell = np.einsum("ta,atpm,atqm->tpq", w, GP, GP, optimize=True)
        Mp = self._scalar_matrix(Mp_cell, 3)
        Kp = self._scalar_matrix(Kp_cell, 3)
        return AssembledOperators(M=M, K=K, D=D, Mp=Mp, Kp=Kp)

    # -- right-hand sides --------------------------------------------------
    def velocity_rhs(self, values) -> np.ndarray:
        """Integrate ``values`` (at quad points, shape (nq, 2)) against the
        velocity basis."""
        nt = len(self.tri_dofs)
        V = np.asarray(values).reshape(nt, len(_QUAD_BARY), 2)
        cell = np.einsum("ta,ai,tac->tic", self.quad_wdet, self.quad_shape, V)
        rhs = np.zeros(self.n_velocity)
        np.add.at(rhs, 2 * self.tri_dofs[:, :, None] + np.arange(2)[None, None, :],
                  cell)
        return rhs

    def gradient_rhs(self, values) -> np.ndarray:
        """Integrate a matrix field against velocity gradients.

        ``values`` has shape (nq, 2, 2) with pairing
        ``sum_mk H[m, k] d_m v_k``.
        """
        nt = len(self.tri_dofs)
        H = np.asarray(values).reshape(nt, len(_QUAD_BARY), 2, 2)
        cell = np.einsum("ta,atim,tamk->tik", self.quad_wdet, self.quad_grads,
                         H, optimize=True)
        rhs = np.zeros(self.n_velocity)
        np.add.at(rhs, 2 * self.tri_dofs[:, :, None] + np.arange(2)[None, None, :],
                  cell)
        return rhs

    def pressure_rhs(self, values) -> np.ndarray:
        nt = len(self.tri_dofs)
        V = np.asarray(values).reshape(nt, len(_QUAD_BARY))
        cell = np.einsum("ta,ap,ta->tp", self.quad_wdet, self.pressure_shape, V)
        rhs = np.zeros(self.n_pressure)
        np.add.at(rhs, self.mesh.triangles, cell)
        return rhs

    # -- interpolation ------------------------------------------------------
    def interpolate_velocity(self, fn) -> np.ndarray:
        """Nodal interpolation of a callable ``fn(points) -> (n, 2)``."""
        vals = np.asarray(fn(self.nodes))
        out = np.zeros(self.n_velocity)
        out[0::2] = vals[:, 0]
        out[1::2] = vals[:, 1]
        return out

    def velocity_at_quad(self, u) -> np.ndarray:
        """Velocity values at quadrature points, shape (nq, 2)."""
        nt = len(self.tri_dofs)
        ux = u[0::2][self.tri_dofs]
        uy = u[1::2][self.tri_dofs]
        vx = np.einsum("ai,ti->ta", self.quad_shape, ux)
        vy = np.einsum("ai,ti->ta", self.quad_shape, uy)
        return np.stack([vx.ravel(), vy.ravel()], axis=-1)

    def velocity_grad_at_quad(self, u) -> np.ndarray:
        """Velocity gradients at quadrature points, shape (nq, 2, 2) with
        entry [m, k] = d_m u_k."""
        nt = len(self.tri_dofs)
        ux = u[0::2][self.tri_dofs]
        uy = u[1::2][self.tri_dofs]
        gx = np.einsum("atim,ti->tam", self.quad_grads, ux)
        gy = np.einsum("atim,ti->tam", self.quad_grads, uy)
        out = np.stack([gx, gy], axis=-1)           # (nt, nq, m, k)
        return out.reshape(-1, 2, 2)

    def pressure_at_quad(self, p) -> np.ndarray:
        vals = np.einsum("ap,tp->ta", self.pressure_shape,
                         p[self.mesh.triangles])
        return vals.ravel()

    def pressure_grad_at_quad(self, p) -> np.ndarray:
        g = np.einsum("atpm,tp->tam", self.pressure_grads,
                      p[self.mesh.triangles])
        return g.reshape(-1, 2)

    # -- beam trace ---------------------------------------------------------
    def trace_matrix(self) -> sp.csr_matrix:
        """Map beam mode vectors to boundary velocity values ``w(y) n(y)``.

        Returns a sparse (n_velocity, n_beam) matrix with nonzero rows only
        at boundary degrees of freedom.
        """
        yb = self.boundary_dof_params
        _, _, _, nor, _ = self.geometry.frame(yb)
        basis = real_mode_basis(yb, self.k_max)     # (n_bdofs, n_beam)
        rows = []
        cols = []
        data = []
        for c in range(2):
            r = 2 * self.boundary_scalar_dofs + c
            rows.append(np.repeat(r, self.n_beam))
            cols.append(np.tile(np.arange(self.n_beam), len(r)))
            data.append((basis * nor[:, c:c + 1]).ravel())
        return sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_velocity, self.n_beam)).tocsr()

    @property
    def boundary_velocity_dofs(self) -> np.ndarray:
        """Interleaved velocity dof indices on the boundary."""
        return np.stack([2 * self.boundary_scalar_dofs,
                         2 * self.boundary_scalar_dofs + 1], axis=1).ravel()

    # -- point location and evaluation --------------------------------------
    def locate_points(self, points, tol: float = 0.03) -> "PointLocation":
        """Find the element and reference coordinates of physical points.

        Candidate elements come from a centroid tree; the quadratic
        reference map is inverted by Newton iteration. A point is accepted
        in the candidate where its smallest barycentric coordinate is
        largest, provided that value exceeds ``-tol`` (slightly outside
        curved boundary edges is legitimate).
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if not hasattr(self, "_centroid_tree"):
            cent = self.mesh.vertices[self.mesh.triangles].mean(axis=1)
            self._centroid_tree = cKDTree(cent)
        n = len(P)
        k = min(12, len(self.tri_dofs))
        _, cand = self._centroid_tree.query(P, k=k)
        cand = cand.reshape(n, -1)
        best_elem = -np.ones(n, dtype=int)
        best_bary = np.full((n, 3), -np.inf)
        best_min = np.full(n, -np.inf)
        for c in range(cand.shape[1]):
            elems = cand[:, c]
            X = self.nodes[self.tri_dofs[elems]]     # (n, 6, 2)
            ref = np.full((n, 2), 1.0 / 3.0)
            for _ in range(12):
                lam = np.stack([1.0 - ref.sum(axis=1), ref[:, 0], ref[:, 1]],
                               axis=1)
                N, dN = _p2_shapes(lam)
                R = np.einsum("ni,nix->nx", N, X) - P
                J = np.einsum("nix,nia->nxa", X, dN)
                det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
                det = np.where(np.abs(det) < 1e-30, 1e-30, det)
                step = np.empty_like(R)
                step[:, 0] = (J[:, 1, 1] * R[:, 0] - J[:, 0, 1] * R[:, 1]) / det
                step[:, 1] = (-J[:, 1, 0] * R[:, 0] + J[:, 0, 0] * R[:, 1]) / det
                ref = ref - np.clip(step, -1.0, 1.0)
            lam = np.stack([1.0 - ref.sum(axis=1), ref[:, 0], ref[:, 1]],
                           axis=1)
            mn = lam.min(axis=1)
            upd = mn > best_min
            best_min[upd] = mn[upd]
            best_bary[upd] = lam[upd]
            best_elem[upd] = elems[upd]
        ok = best_min >= -tol
        if not np.all(ok):
            worst = P[~ok][0]
            raise PointLocationFailure(
                f"point ({worst[0]:.4f}, {worst[1]:.4f}) not inside any "
                "nearby element")
        return PointLocation(elements=best_elem, bary=best_bary)

    def velocity_at_points(self, u, loc) -> np.ndarray:
        """Evaluate a velocity vector at located points, shape (n, 2)."""
        if not isinstance(loc, PointLocation):
            loc = self.locate_points(loc)
        N, _ = _p2_shapes(loc.bary)
        dofs = self.tri_dofs[loc.elements]
        vx = np.einsum("ni,ni->n", N, u[0::2][dofs])
        vy = np.einsum("ni,ni->n", N, u[1::2][dofs])
        return np.stack([vx, vy], axis=1)

    def pressure_at_points(self, p, loc) -> np.ndarray:
        """Evaluate a pressure vector at located points."""
        if not isinstance(loc, PointLocation):
            loc = self.locate_points(loc)
        tri = self.mesh.triangles[loc.elements]
        return np.einsum("ni,ni->n", loc.bary, p[tri])


@dataclass
class PointLocation:
    """Result of matching physical points to mesh elements."""

    elements: np.ndarray        # (n,) triangle index per point
    bary: np.ndarray            # (n, 3) barycentric reference coordinates


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def inf_sup_constant(space: MixedSpace) -> float:
    """Discrete pressure-velocity compatibility constant.

    Smallest generalized singular value of the divergence operator against
    the velocity H1 norm, over mean-zero pressures. Dense solve, intended
    for coarse verification meshes.
    """
    ops = space.assemble()
    H = (ops.K + ops.M).toarray()
    D = ops.D.toarray()
    Mp = ops.Mp.toarray()
    Hinv_Dt = np.linalg.solve(H, D.T)
    S = D @ Hinv_Dt
    # restrict to mean-zero pressures
    ones = np.ones(space.n_pressure)
    w = Mp @ ones
    basis = np.eye(space.n_pressure) - np.outer(ones, w) / (ones @ w)
    qb, _ = np.linalg.qr(basis[:, :-1])
    Sr = qb.T @ S @ qb
    Mr = qb.T @ Mp @ qb
    eig = np.linalg.eigvals(np.linalg.solve(Mr, Sr))
    eig = np.real(eig)
    eig = eig[eig > 1e-14]
    return float(np.sqrt(eig.min()))


def mode_flux_weights(geometry: ReferenceGeometry, k_max: int,
                      n_samples: int = 4096) -> np.ndarray:
    """Weights ``f`` with ``f . w_modes = integral w(y) |phi'(y)| dy``.

    The flux of a boundary velocity ``w n`` through the reference boundary
    equals this weighted sum of real mode coefficients.
    """
    y = np.arange(n_samples) / n_samples
    g = np.linalg.norm(geometry.curve(y, 1), axis=1)
    basis = real_mode_basis(y, k_max)
    return basis.T @ g / n_samples
