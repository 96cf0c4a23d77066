"""Tests for steady flow solves, divergence lifting, and regularity probes."""

import numpy as np
import pytest

from beamflow.discretization import MixedSpace, build_mesh
from beamflow.errors import (
    IncompatibleBoundaryData,
    IncompatibleMean,
    ZeroLoad,
)
from beamflow.fourier import PeriodicField
from beamflow.geometry import ReferenceGeometry, coefficient_fields
from beamflow.stokes import (
    bogovskii_lift,
    broken_h2_seminorm,
    pressure_poisson,
    regularity_ratio,
    solve_steady,
    velocity_hessian_at_quad,
)


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


def _mms_pressure(P):
    return P[:, 0] * P[:, 1]


def _mms_force(P):
    x, y = P[:, 0], P[:, 1]
    return np.stack([-31.0 * y, 33.0 * x], axis=1)


def _space(geo, h, modes=4):
    return MixedSpace(geo, build_mesh(geo, h), beam_modes=modes)


def test_zero_data_gives_zero(circle_geo):
    space = _space(circle_geo, 0.2)
    sol = solve_steady(space, np.zeros((len(space.quad_points), 2)))
    assert np.abs(sol.u).max() < 1e-13
    assert np.abs(sol.p).max() < 1e-13
    assert sol.momentum_residual < 1e-12
    assert sol.div_residual < 1e-12


def test_rigid_rotation_reproduced(circle_geo):
    space = _space(circle_geo, 0.1)

    def rot(y):
        P = circle_geo.curve(y)
        return np.stack([-P[:, 1], P[:, 0]], axis=1)

    sol = solve_steady(space, np.zeros((len(space.quad_points), 2)),
                       g_boundary=rot)
    exact = np.stack([-space.nodes[:, 1], space.nodes[:, 0]], axis=1)
    assert np.abs(sol.u[0::2] - exact[:, 0]).max() < 1e-12
    assert np.abs(sol.u[1::2] - exact[:, 1]).max() < 1e-12
    assert np.abs(sol.p).max() < 1e-12
    assert sol.div_residual < 1e-12


def test_manufactured_convergence(circle_geo):
    errs = []
    for h in (0.1, 0.05):
        space = _space(circle_geo, h)
        sol = solve_steady(space, _mms_force(space.quad_points))
        w = space.quad_wdet.ravel()
        gh = space.velocity_grad_at_quad(sol.u)
        ge = _mms_gradient(space.quad_points)
        ph = space.pressure_at_quad(sol.p)
        pe = _mms_pressure(space.quad_points)
        pe = pe - (w @ pe) / w.sum()
        ph = ph - (w @ ph) / w.sum()
        e_h1 = np.sqrt(w @ ((gh - ge) ** 2).sum(axis=(1, 2)))
        e_p = np.sqrt(w @ (ph - pe) ** 2)
        errs.append((e_h1, e_p))
        assert sol.momentum_residual < 1e-10
        assert sol.div_residual < 1e-10
    r_u = np.log(errs[0][0] / errs[1][0]) / np.log(2.0)
    r_p = np.log(errs[0][1] / errs[1][1]) / np.log(2.0)
    assert errs[0][0] < 3e-2
    assert 1.8 < r_u < 2.3
    assert 1.9 < r_p < 2.7


def test_energy_consistency(circle_geo):
    space = _space(circle_geo, 0.1)
    ops = space.assemble()
    F = space.velocity_rhs(_mms_force(space.quad_points))
    sol = solve_steady(space, _mms_force(space.quad_points), ops=ops)
    lhs = sol.u @ (ops.K @ sol.u)
    rhs = sol.u @ F  # zero boundary data, no boundary work
    assert abs(lhs - rhs) < 1e-8 * (1.0 + abs(lhs))


def test_incompatible_boundary_data_raises(circle_geo):
    space = _space(circle_geo, 0.2)

    def outward(y):
        _, _, _, nor, _ = circle_geo.frame(y)
        return nor

    with pytest.raises(IncompatibleBoundaryData):
        solve_steady(space, np.zeros((len(space.quad_points), 2)),
                     g_boundary=outward)


def test_bogovskii_divergence_refinement(circle_geo):
    errs = []
    consts = []
    for h in (0.15, 0.1):
        space = _space(circle_geo, h)
        ops = space.assemble()
        hq = space.quad_points[:, 0]
        v = bogovskii_lift(space, hq, ops=ops)
        assert np.abs(v[space.boundary_velocity_dofs]).max() == 0.0
        g = space.velocity_grad_at_quad(v)
        w = space.quad_wdet.ravel()
        err = np.sqrt(w @ (g[:, 0, 0] + g[:, 1, 1] - hq) ** 2)
        errs.append(err)
        gn = np.sqrt(np.einsum("q,qmk->", w, g ** 2))
        consts.append(gn / np.sqrt(w @ hq ** 2))
    assert errs[0] < 8e-4
    assert errs[0] / errs[1] > 1.5
    assert 1.40 < consts[0] < 1.43
    assert 1.40 < consts[1] < 1.43


def test_bogovskii_stability_sweep(circle_geo, rng):
    space = _space(circle_geo, 0.12)
    ops = space.assemble()
    w = space.quad_wdet.ravel()
    P = space.quad_points
    ratios = []
    for _ in range(20):
        c = rng.standard_normal(6)
        hq = (c[0] * P[:, 0] + c[1] * P[:, 1] + c[2] * P[:, 0] * P[:, 1]
              + c[3] * np.sin(P[:, 0] + P[:, 1])
              + c[4] * (P[:, 0] ** 2 - P[:, 1] ** 2)
              + c[5] * np.cos(2.0 * P[:, 1]))
        hq = hq - (w @ hq) / w.sum()
        v = bogovskii_lift(space, hq, ops=ops)
        g = space.velocity_grad_at_quad(v)
        gn = np.sqrt(np.einsum("q,qmk->", w, g ** 2))
        ratios.append(gn / np.sqrt(w @ hq ** 2))
    ratios = np.array(ratios)
    assert ratios.max() / ratios.min() < 1.25
    assert ratios.max() < 2.0


def test_bogovskii_zero_and_mean_guard(circle_geo):
    space = _space(circle_geo, 0.2)
    ops = space.assemble()
    v = bogovskii_lift(space, np.zeros(len(space.quad_points)), ops=ops)
    assert np.abs(v).max() == 0.0
    with pytest.raises(IncompatibleMean):
        bogovskii_lift(space, np.ones(len(space.quad_points)), ops=ops)


def test_pressure_poisson_manufactured(circle_geo):
    errs = []
    for h in (0.15, 0.08):
        space = _space(circle_geo, h)
        P = space.quad_points
        gq = np.stack([np.cos(P[:, 0]) * np.cos(P[:, 1]),
                       -np.sin(P[:, 0]) * np.sin(P[:, 1])], axis=1)
        ph = pressure_poisson(space, gq)
        w = space.quad_wdet.ravel()
        pe = np.sin(P[:, 0]) * np.cos(P[:, 1])
        pe = pe - (w @ pe) / w.sum()
        pv = space.pressure_at_quad(ph)
        pv = pv - (w @ pv) / w.sum()
        errs.append(np.sqrt(w @ (pv - pe) ** 2))
    assert errs[0] < 3e-3
    rate = np.log(errs[0] / errs[1]) / np.log(0.15 / 0.08)
    assert rate > 1.7


def test_pressure_poisson_null_cases(circle_geo):
    space = _space(circle_geo, 0.15)
    w = space.quad_wdet.ravel()
    ph = pressure_poisson(space, np.zeros((len(space.quad_points), 2)))
    assert np.abs(ph).max() < 1e-13
    # rigid rotation: divergence free with zero normal trace on the disk
    P = space.quad_points
    gq = np.stack([-P[:, 1], P[:, 0]], axis=1)
    ph = pressure_poisson(space, gq)
    assert np.sqrt(w @ space.pressure_at_quad(ph) ** 2) < 1e-12


def test_hessian_exact_on_straight_elements(circle_geo):
    space = _space(circle_geo, 0.1)
    u = np.zeros(space.n_velocity)
    u[0::2] = space.nodes[:, 0] ** 2
    u[1::2] = space.nodes[:, 0] * space.nodes[:, 1]
    H = velocity_hessian_at_quad(space, u)
    nq = len(space.quad_points) // len(space.tri_dofs)
    H = H.reshape(len(space.tri_dofs), nq, 2, 2, 2)
    X = space.nodes[space.tri_dofs]
    mids = np.stack([X[:, 3] - 0.5 * (X[:, 0] + X[:, 1]),
                     X[:, 4] - 0.5 * (X[:, 1] + X[:, 2]),
                     X[:, 5] - 0.5 * (X[:, 2] + X[:, 0])], axis=1)
    straight = np.abs(mids).max(axis=(1, 2)) < 1e-12
    assert straight.sum() > 0.8 * len(straight)
    exact = np.zeros((2, 2, 2))
    exact[0, 0, 0] = 2.0
    exact[0, 1, 1] = 1.0
    exact[1, 0, 1] = 1.0
    assert np.abs(H[straight] - exact).max() < 1e-10


def test_broken_h2_values(circle_geo):
    space = _space(circle_geo, 0.1)
    u = np.zeros(space.n_velocity)
    u[0::2] = space.nodes[:, 0] ** 2
    u[1::2] = space.nodes[:, 0] * space.nodes[:, 1]
    val = broken_h2_seminorm(space, u)
    assert abs(val - np.sqrt(6.0 * np.pi)) < 5e-3 * np.sqrt(6.0 * np.pi)
    ui = space.interpolate_velocity(_mms_velocity)
    val = broken_h2_seminorm(space, ui)
    exact = np.sqrt(384.0 * np.pi)
    assert abs(val - exact) < 2e-2 * exact


def test_regularity_ratio_properties(circle_geo):
    space = _space(circle_geo, 0.1)
    ops = space.assemble()
    fq = _mms_force(space.quad_points)
    sol = solve_steady(space, fq, ops=ops)
    rep = regularity_ratio(space, sol.u, sol.p, fq)
    rep10 = regularity_ratio(space, 10.0 * sol.u, 10.0 * sol.p, 10.0 * fq)
    assert abs(rep.ratio - rep10.ratio) < 1e-12 * rep.ratio
    assert 1.0 < rep.ratio < 1.3
    with pytest.raises(ZeroLoad):
        regularity_ratio(space, sol.u, sol.p, np.zeros_like(fq))


def test_regularity_family_ordering_smoke(circle_geo):
    space = _space(circle_geo, 0.08)
    fq = _mms_force(space.quad_points)
    vals = {}
    for eps, label in ((0.4, "rough"), (-0.1, "smooth")):
        out = []
        for m in (2, 8):
            amp = 0.15 / m ** (1.5 - eps)
            eta = PeriodicField.from_mode_list([(m, amp, 0.0)])
            fields = coefficient_fields(circle_geo, eta, space.quad_points)
            ops = space.assemble(fields)
            sol = solve_steady(space, fq, ops=ops)
            out.append(regularity_ratio(space, sol.u, sol.p, fq).ratio)
        vals[label] = out
    assert vals["rough"][1] > vals["rough"][0]
    assert vals["smooth"][1] < vals["smooth"][0] + 0.01
    assert vals["rough"][1] > vals["smooth"][1] + 0.1
