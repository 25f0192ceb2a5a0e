import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bundled, random_hat
from dpwlab.errors import DomainError, ResonanceError
from dpwlab.loopalg import I2, LoopMatrix, det2, dag, opnorm2
from dpwlab.potential import (
    ConstantGauge, ConstantPotential, ExpGauge, FunctionGauge, MobiusMap, PerturbationSpec,
    PerturbationTerm, PotentialSpec, ProductGauge, SpecPotential, build_regularizing_gauge,
    check_remark_range, compute_pt, gauge_action, hmatrix, laurent_in_z, mobius_pullback,
    mu_squared, normalize_initial_frame, potential_eval, regularized_potential,
    remark_range_residual, solve_rs,
)


def _spec(t, terms, branch="spherical", eps=0.5):
    terms = tuple(PerturbationTerm(k, j, e, tuple(p)) for k, j, e, p in terms)
    return PotentialSpec(solve_rs(t, branch), PerturbationSpec(terms, eps))


def test_solve_rs_examples():
    res = solve_rs(1 / 16)
    assert res.r == res.s == 0.25
    res = solve_rs(0.0)
    assert (res.r, res.s) == (0.5, 0.0)
    res = solve_rs(-0.5)
    assert abs(res.r - 1) < 1e-15 and abs(res.s + 0.5) < 1e-15
    res = solve_rs(0.01, "catenoidal")
    assert res.r < res.s
    with pytest.raises(DomainError):
        solve_rs(1 / 16 + 1e-9)
    with pytest.raises(DomainError):
        solve_rs(0.01, "cylindrical")


def test_solve_rs_random(rng):
    for t in 1 / 16 - rng.exponential(0.5, 1000):
        for branch in ("spherical", "catenoidal"):
            res = solve_rs(t, branch)
            assert abs(res.r + res.s - 0.5) < 1e-15
            assert abs(res.r * res.s - t) < 1e-15 * max(1.0, abs(t))
            assert (res.r >= res.s) == (branch == "spherical")


def test_mu_squared_examples():
    for t in (-0.3, 0.0, 0.05):
        assert abs(mu_squared(solve_rs(t), 1.0) - 0.25) < 1e-16
    lam = np.exp(1j * np.linspace(0, 6, 7))
    assert np.allclose(mu_squared(solve_rs(0.0), lam), 0.25, atol=1e-16)
    assert abs(mu_squared(solve_rs(1 / 16), -1.0)) < 1e-16
    with pytest.raises(DomainError):
        mu_squared(solve_rs(0.01), 0.0)


def test_mu_squared_is_minus_det(rng):
    for _ in range(64):
        t = 1 / 16 - rng.exponential(0.3)
        res = solve_rs(t, rng.choice(["spherical", "catenoidal"]))
        lam = np.exp(rng.uniform(-0.5, 0.5) + 1j * rng.uniform(0, 2 * np.pi))
        assert abs(mu_squared(res, lam) + np.linalg.det(res.A_samples(lam))) < 1e-13


def test_remark_range(grid):
    assert remark_range_residual(solve_rs(0.0), grid) == 0.0
    assert check_remark_range(solve_rs(0.01), grid) < 0.25
    # at the cylinder mu^2 vanishes at lam = -1
    with pytest.raises(DomainError):
        check_remark_range(solve_rs(1 / 16), grid)


def test_potential_eval_examples():
    lam = np.exp(1j * np.linspace(0, 3, 4))
    spec = bundled("spherical_admissible", 0.0)
    z = 0.2 + 0.1j
    assert np.array_equal(potential_eval(spec, z, lam), spec.residue.A_samples(lam) / z)
    spec = PotentialSpec.delaunay(0.03)
    assert np.allclose(potential_eval(spec, z, 1.0), np.array([[0, 0.5], [0.5, 0]]) / z, atol=1e-16)
    t = 0.02
    spec = _spec(t, [(0, 0, "12", (0, 2.0)), (0, 0, "21", (0, -1.0))])
    C = np.array([[0, 2.0], [-1.0, 0]])
    assert np.allclose(potential_eval(spec, z, lam), spec.residue.A_samples(lam) / z + t * C, atol=1e-15)
    with pytest.raises(DomainError):
        potential_eval(spec, 0, lam)
    with pytest.raises(DomainError):
        potential_eval(spec, 0.5, lam)


def test_evaluator_matches_potential_eval(grid):
    spec = bundled("spherical_admissible")
    xi = spec.evaluator(grid)
    z = 0.3 * np.exp(0.7j)
    assert np.allclose(xi(z), potential_eval(spec, z, grid.lam), atol=1e-14)


def test_perturbation_validation():
    with pytest.raises(DomainError):
        _spec(0.01, [(0, 0, "12", (1.0, 1.0))])          # nonzero at t = 0
    with pytest.raises(DomainError):
        _spec(0.01, [(0, -1, "21", (0, 1.0))])           # lam^-1 outside upper right
    with pytest.raises(DomainError):
        _spec(0.01, [(0, 0, "11", (0, 1.0))])            # not trace-free
    with pytest.raises(DomainError):
        _spec(0.01, [(9, 0, "12", (0, 1.0))])
    with pytest.raises(DomainError):
        _spec(0.01, [(0, 5, "12", (0, 1.0))])
    with pytest.raises(DomainError):
        _spec(0.01, [(0, 0, "13", (0, 1.0))])
    # z xi_{-1}^{12} = r - z vanishes at z = r inside the disk
    spec = _spec(0.01, [(0, -1, "12", (0, -100.0))], eps=0.9)
    with pytest.raises(DomainError):
        spec.check_nondegenerate()
    assert bundled("spherical_admissible").check_nondegenerate() > 0
    assert PotentialSpec.delaunay(0.01).check_nondegenerate() == np.inf


def test_spec_json_round_trip():
    spec = bundled("catenoidal_admissible")
    again = PotentialSpec.from_json(spec.to_json())
    assert again == spec
    with pytest.raises(DomainError):
        PotentialSpec.from_json({**spec.to_json(), "t": [0.01, 0.02]})


def test_gauge_identity_and_constant_diag(grid):
    xi = bundled("spherical_admissible").evaluator(grid)
    z = 0.1 + 0.2j
    assert np.allclose(gauge_action(xi, ConstantGauge(grid, I2))(z), xi(z), atol=1e-15)
    zero = ConstantPotential(grid, np.zeros((2, 2)))
    out = gauge_action(zero, ConstantGauge(grid, np.diag([2.0, 0.5])))(z)
    assert np.max(np.abs(out)) == 0
    with pytest.raises(DomainError):
        gauge_action(xi, ConstantGauge(grid, np.zeros((2, 2))))(z)


def _plus_gauges(grid, rng):
    lam = grid.lam[:, None, None]
    g1 = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    g1 -= np.trace(g1) / 2 * np.eye(2)
    g1 = g1[None] + lam * np.array([[0, 0.3], [0.2, 0]])
    G1 = ExpGauge(grid, 0.5 * g1)
    # unipotent second gauge, derivative by the Cauchy integral fallback
    N = np.array([[0, 1], [0, 0]]) * lam
    G2 = FunctionGauge(grid, lambda z: np.eye(2) + z * N)
    return G1, G2


def test_gauge_right_action(grid, rng):
    xi = bundled("spherical_admissible").evaluator(grid)
    G1, G2 = _plus_gauges(grid, rng)
    lhs = gauge_action(xi, ProductGauge(G1, G2))
    rhs = gauge_action(gauge_action(xi, G1), G2)
    for z in (0.1, 0.2j, -0.15 + 0.05j):
        assert np.max(np.abs(lhs(z) - rhs(z))) < 1e-10


def test_regularizing_gauge_z0_term_is_pt_A(grid):
    # xi . G_t has z^0 term p_t A_t up to O(t^2)-free exactness: check the lam-grid values
    spec = bundled("spherical_admissible")
    reg = build_regularizing_gauge(spec, grid)
    xiG = gauge_action(spec.evaluator(grid), reg.G)
    c = laurent_in_z(xiG, 4, 0.2)
    assert np.max(np.abs(c[0] - spec.residue.A_samples(grid.lam))) < 1e-12
    assert np.max(np.abs(c[1] - reg.p_t * spec.residue.A_samples(grid.lam))) < 1e-9


def test_mobius_pullback(grid):
    base = PotentialSpec.delaunay(0.02).evaluator(grid)
    z = 0.2 + 0.1j
    same = mobius_pullback(base, MobiusMap(0.0, 1.0))
    assert np.allclose(same(z), base(z), atol=1e-16)
    p = 0.3
    pulled = mobius_pullback(base, MobiusMap(p, 1.0))
    A = base.residue.A_samples(grid.lam)
    assert np.allclose(pulled(z), A / (z * (1 + p * z)), atol=1e-13)
    h = MobiusMap(2.0, 1.0)
    assert h(0) == 0
    assert abs(h.inverse(h(0.1 + 0.1j)) - (0.1 + 0.1j)) < 1e-15
    with pytest.raises(DomainError):
        h(0.6)
    with pytest.raises(DomainError):
        MobiusMap(1.0, 0.0)


def test_regularized_potential_normal_form(grid):
    for name in ("spherical_admissible", "catenoidal_admissible"):
        spec = bundled(name)
        xt, reg = regularized_potential(spec, grid)
        c = laurent_in_z(xt, 4, 0.2 * min(1.0, 1 / max(1e-9, abs(reg.p_t))))
        assert np.max(np.abs(c[0] - spec.residue.A_samples(grid.lam))) < 1e-11
        assert np.max(np.abs(c[1])) < 1e-9


def test_regularized_z0_term_vanishes_linearly_in_t(grid):
    # without the gauge the z^0 term is O(t); after it, it vanishes
    for t in (1e-3, 1e-2):
        spec = bundled("spherical_admissible", t)
        raw = laurent_in_z(spec.evaluator(grid), 3, 0.2)
        assert np.max(np.abs(raw[1])) <= 10 * t
        xt, _ = regularized_potential(spec, grid)
        assert np.max(np.abs(laurent_in_z(xt, 3, 0.2)[1])) <= 1e-9


def test_compute_pt_examples():
    assert compute_pt(PotentialSpec.delaunay(0.01)) == 0
    spec = _spec(0.01, [(0, 1, "12", (0, 1.0)), (0, 2, "21", (0, 1.0))])
    assert compute_pt(spec) == 0
    t = 0.01
    # c12(t, 0) = 2t means the z^0 coefficient t C_t carries 2 t^2
    spec = _spec(t, [(0, -1, "12", (0, 0, 2.0))], branch="catenoidal")
    assert abs(compute_pt(spec) - spec.residue.s * t) < 1e-16
    with pytest.raises(DomainError):
        _spec(t, [(0, -1, "21", (0, 2.0))])


def test_regularizing_gauge_examples(grid):
    spec = bundled("spherical_admissible", 0.0)
    reg = build_regularizing_gauge(spec, grid)
    assert reg.g.norm() < 1e-15 and reg.p_t == 0
    assert np.allclose(reg.G(0.3), I2, atol=1e-15)
    assert reg.h.p == 0 and reg.h.q == 1
    reg = build_regularizing_gauge(PotentialSpec.delaunay(0.01), grid)
    assert reg.P_t1.norm() == 0 and reg.p_t == 0 and reg.g.norm() == 0
    for name in ("spherical_admissible", "catenoidal_admissible"):
        spec = bundled(name)
        reg = build_regularizing_gauge(spec, grid)
        r = spec.residue.r
        assert np.max(np.abs(reg.P_t1.coeff(-1) - np.array([[0, r * reg.p_t], [0, 0]]))) < 1e-9
        assert reg.diagnostics["g_lam_m1"] < 1e-9
        assert reg.diagnostics["g_lower_left_0"] < 1e-9
        assert reg.h.p == reg.p_t and reg.h.q == 1


def test_regularizing_gauge_resonance(grid):
    # a z^0 term not commuting with A to second order at lam = 1
    spec = _spec(0.01, [(0, 0, "11", (0, 1.0)), (0, 0, "22", (0, -1.0))])
    with pytest.raises(ResonanceError, match="monodromy hypothesis likely violated"):
        build_regularizing_gauge(spec, grid)


def test_pt_vanishes_with_t(grid):
    ts = [5e-2, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4]
    ps = [abs(build_regularizing_gauge(bundled("spherical_admissible", t), grid).p_t) for t in ts]
    assert all(b <= a * 1.05 for a, b in zip(ps, ps[1:]))
    assert ps[-1] < 1e-3 * max(ps[0], 1e-12) * 10


def _check_normalization(a, b, c, d, grid):
    out = normalize_initial_frame(a, b, c, d, grid)
    assert out.residual < 1e-9
    assert out.unitarity < 1e-9
    return out


def test_normalize_initial_frame_examples(grid):
    out = _check_normalization(1, 0, 0, 1, grid)
    assert out.rho == pytest.approx(1, abs=1e-15) and abs(out.mu) < 1e-15
    assert out.h.p == 0 and out.h.q == pytest.approx(1, abs=1e-15)
    assert np.allclose(out.G(0.3), I2, atol=1e-15)
    assert np.max(opnorm2(out.Q.samples - hmatrix(grid).samples)) < 1e-14
    s2 = 1 / math.sqrt(2)
    out = _check_normalization(s2, -s2, s2, s2, grid)
    assert out.rho == pytest.approx(1, abs=1e-15) and abs(out.mu) < 1e-15
    out = _check_normalization(2, 1, 1, 1, grid)
    assert out.rho == pytest.approx(math.sqrt(2), abs=1e-15)
    with pytest.raises(DomainError):
        normalize_initial_frame(2, 1, 1, 1.5, grid)             # det != 1


def test_normalize_initial_frame_random(grid, rng):
    for _ in range(20):
        _check_normalization(*random_hat(rng, 2.0), grid)


def test_normalization_gauge_derivative(grid, rng):
    out = normalize_initial_frame(*random_hat(rng, 2.0), grid)
    z = 0.05 + 0.02j
    num = FunctionGauge(grid, out.G.fn).deriv(z)
    assert np.max(np.abs(num - out.G.deriv(z))) < 1e-9
    assert np.allclose(det2(out.G(z)), 1, atol=1e-13)
