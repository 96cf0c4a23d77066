"""Tests for the curved Taylor-Hood discretization of the reference domain."""

import numpy as np
import pytest

from beamflow.discretization import (
    _QUAD_BARY,
    _QUAD_W,
    MixedSpace,
    build_mesh,
    inf_sup_constant,
    mesh_quality,
    mode_flux_weights,
)
from beamflow.fourier import PeriodicField, TWO_PI
from beamflow.geometry import ReferenceGeometry, coefficient_fields


def _mms_velocity(P):
    x, y = P[:, 0], P[:, 1]
    r2 = x * x + y * y
    return np.stack([-4.0 * y * (1.0 - r2), 4.0 * x * (1.0 - r2)], axis=1)


def _mms_gradient(P):
    x, y = P[:, 0], P[:, 1]
    g = np.zeros((len(P), 2, 2))
    g[:, 0, 0] = 8.0 * x * y
    g[:, 1, 0] = -4.0 + 4.0 * x * x + 12.0 * y * y
    g[:, 0, 1] = 4.0 - 12.0 * x * x - 4.0 * y * y
    g[:, 1, 1] = -8.0 * x * y
    return g


def test_quadrature_degree_five_exact():
    # reference-triangle integrals of barycentric monomials have the closed
    # form a! b! c! * 2 / (a + b + c + 2)! relative to area 1/2
    assert _QUAD_BARY.shape[1] == 3
    assert abs(_QUAD_BARY.sum(axis=1) - 1.0).max() < 1e-14
    assert abs(_QUAD_W.sum() - 0.5) < 1e-14
    lam = _QUAD_BARY
    from math import factorial

    def exact(a, b, c):
        return (factorial(a) * factorial(b) * factorial(c) * 2.0
                / factorial(a + b + c + 2) * 0.5)

    for (a, b, c) in [(5, 0, 0), (3, 2, 0), (2, 2, 1), (1, 1, 3), (4, 1, 0)]:
        val = _QUAD_W @ (lam[:, 0] ** a * lam[:, 1] ** b * lam[:, 2] ** c)
        assert abs(val - exact(a, b, c)) < 1e-15


def test_mesh_basic_properties(circle_geo):
    mesh = build_mesh(circle_geo, 0.15)
    assert mesh_quality(mesh) > 20.0
    nb = len(mesh.boundary_nodes)
    assert nb == round(2.0 * np.pi / 0.15)
    r = np.linalg.norm(mesh.vertices[mesh.boundary_nodes], axis=1)
    assert np.abs(r - 1.0).max() < 1e-9
    # boundary triangle edge structure: consecutive boundary nodes share an edge
    edges = set()
    for t in mesh.triangles:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edges.add(frozenset((t[a], t[b])))
    for i in range(nb):
        assert frozenset((i, (i + 1) % nb)) in edges


def test_mesh_determinism(circle_geo):
    m1 = build_mesh(circle_geo, 0.2)
    m2 = build_mesh(circle_geo, 0.2)
    assert np.array_equal(m1.vertices, m2.vertices)
    assert np.array_equal(m1.triangles, m2.triangles)


def test_area_convergence(circle_geo):
    errs = []
    for h in (0.2, 0.1):
        mesh = build_mesh(circle_geo, h)
        space = MixedSpace(circle_geo, mesh, beam_modes=4)
        errs.append(abs(space.quad_wdet.sum() - np.pi))
    assert errs[0] < 5e-5
    assert errs[1] < 2e-6
    assert errs[0] / errs[1] > 8.0


def test_interpolation_h1_rate(circle_geo):
    errs = []
    for h in (0.1, 0.05):
        mesh = build_mesh(circle_geo, h)
        space = MixedSpace(circle_geo, mesh, beam_modes=4)
        ui = space.interpolate_velocity(_mms_velocity)
        gh = space.velocity_grad_at_quad(ui)
        ge = _mms_gradient(space.quad_points)
        w = space.quad_wdet.ravel()
        errs.append(np.sqrt(w @ ((gh - ge) ** 2).sum(axis=(1, 2))))
    rate = np.log(errs[0] / errs[1]) / np.log(2.0)
    assert 1.9 < rate < 2.3


def test_mass_and_stiffness_identities(circle_geo):
    mesh = build_mesh(circle_geo, 0.15)
    space = MixedSpace(circle_geo, mesh, beam_modes=4)
    ops = space.assemble()
    ones = space.interpolate_velocity(
        lambda P: np.ones((len(P), 2)))
    # constants: zero stiffness energy, mass gives twice the area
    assert np.abs(ops.K @ ones).max() < 1e-12
    assert abs(ones @ ops.M @ ones - 2.0 * np.pi) < 1e-4
    # linear shear: unit gradient energy per component
    u = space.interpolate_velocity(
        lambda P: np.stack([P[:, 1], np.zeros(len(P))], axis=1))
    assert abs(u @ ops.K @ u - np.pi) < 1e-4
    # pressure blocks: Mp integrates, Kp kills constants
    pc = np.ones(space.n_pressure)
    assert abs(pc @ ops.Mp @ pc - np.pi) < 1e-4
    assert np.abs(ops.Kp @ pc).max() < 1e-12


def test_divergence_operator_closed_forms(circle_geo):
    mesh = build_mesh(circle_geo, 0.15)
    space = MixedSpace(circle_geo, mesh, beam_modes=4)
    ops = space.assemble()
    mp1 = ops.Mp @ np.ones(space.n_pressure)
    # div (x, 0) = 1, div (y, 0) = 0, div (-y, x) = 0
    u = space.interpolate_velocity(
        lambda P: np.stack([P[:, 0], np.zeros(len(P))], axis=1))
    assert np.abs(ops.D @ u - mp1).max() < 1e-13
    u = space.interpolate_velocity(
        lambda P: np.stack([P[:, 1], np.zeros(len(P))], axis=1))
    assert np.abs(ops.D @ u).max() < 1e-13
    u = space.interpolate_velocity(
        lambda P: np.stack([-P[:, 1], P[:, 0]], axis=1))
    assert np.abs(ops.D @ u).max() < 1e-13


def test_assemble_identity_matches_zero_displacement(circle_geo):
    mesh = build_mesh(circle_geo, 0.2)
    space = MixedSpace(circle_geo, mesh, beam_modes=4)
    plain = space.assemble()
    zero = PeriodicField(np.zeros(3))
    fields = coefficient_fields(circle_geo, zero, space.quad_points)
    mapped = space.assemble(fields)
    for a, b in ((plain.M, mapped.M), (plain.K, mapped.K), (plain.D, mapped.D)):
        assert abs(a - b).max() < 1e-12


def test_piola_residual_decreases(circle_geo):
    # the columns of the cofactor field are divergence free, so pairing the
    # field against zero-trace test gradients is pure quadrature error
    eta = PeriodicField.from_mode_list(
        [(0, 0.1, 0.0), (1, 0.05, 0.0), (2, 0.0, 0.033)])
    sups = []
    for h in (0.2, 0.1, 0.05):
        mesh = build_mesh(circle_geo, h)
        space = MixedSpace(circle_geo, mesh, beam_modes=4)
        fields = coefficient_fields(circle_geo, eta, space.quad_points)
        r = space.gradient_rhs(fields.B)
        interior = np.ones(space.n_velocity, dtype=bool)
        interior[space.boundary_velocity_dofs] = False
        sups.append(np.abs(r[interior]).max())
    assert sups[0] > sups[1] > sups[2]
    assert sups[0] / sups[2] > 4.0


def test_trace_matrix_circle_closed_form(circle_geo):
    mesh = build_mesh(circle_geo, 0.15)
    space = MixedSpace(circle_geo, mesh, beam_modes=3)
    N = space.trace_matrix()
    assert N.shape == (space.n_velocity, 7)
    yb = space.boundary_dof_params
    nor = np.stack([np.cos(TWO_PI * yb), np.sin(TWO_PI * yb)], axis=1)
    dense = N.toarray()
    bd = space.boundary_scalar_dofs
    # constant mode: w = 1 gives the outward normal at each boundary dof
    assert np.abs(dense[2 * bd, 0] - nor[:, 0]).max() < 1e-12
    assert np.abs(dense[2 * bd + 1, 0] - nor[:, 1]).max() < 1e-12
    # oscillating mode: w = sin(2 pi 2 y)
    col = 1 + 3 + 1  # layout [const, cos 1..3, sin 1..3]
    w = np.sin(TWO_PI * 2 * yb)
    assert np.abs(dense[2 * bd, col] - w * nor[:, 0]).max() < 1e-12
    # interior rows vanish
    interior = np.ones(space.n_velocity, dtype=bool)
    interior[space.boundary_velocity_dofs] = False
    assert abs(dense[interior]).max() == 0.0


def test_mode_flux_weights_circle(circle_geo):
    fw = mode_flux_weights(circle_geo, 3)
    assert abs(fw[0] - TWO_PI) < 1e-12
    assert np.abs(fw[1:]).max() < 1e-12


def test_mode_flux_weights_match_divergence(ellipse_geo):
    fw = mode_flux_weights(ellipse_geo, 3)
    # constant-mode weight is the perimeter
    assert abs(fw[0] - ellipse_geo.perimeter(8192)) < 1e-9
    mesh = build_mesh(ellipse_geo, 0.1)
    space = MixedSpace(ellipse_geo, mesh, beam_modes=3)
    ops = space.assemble()
    N = space.trace_matrix()
    rng = np.random.default_rng(3)
    what = rng.standard_normal(space.n_beam)
    disc = np.ones(space.n_pressure) @ (ops.D @ (N @ what))
    exact = fw @ what
    assert abs(disc - exact) < 1e-4 * (1.0 + abs(exact))


def test_inf_sup_stable(circle_geo):
    vals = []
    for h in (0.25, 0.18, 0.12):
        mesh = build_mesh(circle_geo, h)
        space = MixedSpace(circle_geo, mesh, beam_modes=4)
        vals.append(inf_sup_constant(space))
    vals = np.array(vals)
    assert vals.min() > 0.8
    assert vals.max() - vals.min() < 0.05


def test_beam_mode_cap(circle_geo):
    mesh = build_mesh(circle_geo, 0.25)
    nb = len(mesh.boundary_nodes)
    space = MixedSpace(circle_geo, mesh, beam_modes=64)
    assert space.k_max == nb // 4
    assert space.n_beam == 2 * space.k_max + 1
