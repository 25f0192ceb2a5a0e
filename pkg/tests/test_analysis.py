import math

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import bundled
from dpwlab.analysis import convergence_experiment, frame_growth_check
from dpwlab.analysis.convergence import fit_rates
from dpwlab.analysis.growth import annulus_norm
from dpwlab.frame import CoverPoint, radial_path, z_pow_A
from dpwlab.loopalg import LoopMatrix, su2_from_r3
from dpwlab.potential import ConstantPotential, PotentialSpec

Z_LADDER = np.logspace(-3, -1, 8)


@pytest.fixture(scope="module")
def small_t_report(grid64):
    # the regime where both rates are clean: |w| well outside the neck scale |t|
    return convergence_experiment(bundled("spherical_admissible"), np.logspace(-4, -3, 4), Z_LADDER,
                                  grid=grid64)


@pytest.fixture(scope="module")
def t_1e2_report(grid64):
    return convergence_experiment(bundled("spherical_admissible"), np.logspace(-3, -2, 4), Z_LADDER,
                                  grid=grid64)


def test_fit_rates_recovers_synthetic_law():
    ts, zs = np.logspace(-4, -2, 5), np.logspace(-3, -1, 6)
    E = 3.0 * ts[:, None] ** 1.2 * zs[None] ** 0.8
    a, C, b, res, pz, pt = fit_rates(ts, zs, E, floor=0.0)
    assert a == pytest.approx(0.8) and b == pytest.approx(1.2) and C == pytest.approx(3.0)
    assert res < 1e-12
    assert np.allclose(pz, 0.8) and np.allclose(pt, 1.2)


def test_zero_perturbation_is_at_floor(grid64):
    rep = convergence_experiment(PotentialSpec.delaunay(1e-2, epsilon=0.5), [1e-3, 1e-2], Z_LADDER[::3],
                                 grid=grid64)
    assert np.all(rep.errors < 1e-7) and np.all(rep.errors_normal < 1e-7)
    assert rep.fitted_alpha is None and "skipped" in rep.info["fit"]


def test_t_zero_is_at_floor(grid64):
    rep = convergence_experiment(bundled("spherical_admissible"), [0.0], Z_LADDER[::3], grid=grid64)
    assert np.all(rep.errors < 1e-7) and np.all(rep.errors_normal < 1e-7)
    assert rep.fitted_alpha is None


def test_convergence_t_1e2(t_1e2_report):
    # immersion mode; slopes fitted in |w| at t = 1e-2 and in t across the ladder
    rep = t_1e2_report
    assert rep.masked == 0
    assert rep.slopes_z[-1] >= 0.9
    assert rep.fitted_t_slope >= 0.9


def test_convergence_rates_small_t(small_t_report):
    rep = small_t_report
    assert rep.fitted_alpha >= 0.9 and rep.fitted_t_slope >= 0.9
    assert rep.alpha_normal >= 0.9 and rep.t_slope_normal >= 0.9
    assert rep.fit_residual < 0.3


def _check_monotone(E, floor, factor):
    # only cells resolved above the control run's round-off floor carry the rate
    n = 0
    for row in E:
        ok = np.isfinite(row) & (row > factor * np.asarray(floor))
        r = row[ok]
        assert np.all(r[:-1] <= 1.05 * r[1:])
        n += len(r)
    assert n >= E.size // 2


def test_errors_decrease_towards_puncture(small_t_report, t_1e2_report):
    for rep in (small_t_report, t_1e2_report):
        _check_monotone(rep.errors, rep.info["floor_z"], rep.info["noise_factor"])
        _check_monotone(rep.errors_normal, rep.info["floor_z_normal"], rep.info["noise_factor"])


def test_immersion_and_normal_alpha_agree(small_t_report):
    # measured: immersion alpha ~2.0, normal alpha ~1.0 (the perturbation acts as a normal
    # displacement ~ t|w|^2 whose normal map tilts by ~ t|w|); kept as stated
    rep = small_t_report
    assert abs(rep.fitted_alpha - rep.alpha_normal) < 0.15


def test_report_rows_and_json(small_t_report):
    rep = small_t_report
    rows = rep.rows()
    assert len(rows) == 2 * len(rep.t_ladder) * len(rep.z_ladder)
    assert {r[3] for r in rows} == {"immersion", "normal"}
    doc = rep.to_json()
    assert doc["immersion"]["alpha"] == rep.fitted_alpha
    assert np.all(rep.errors >= 0)


def test_growth_constant_unitary_frame(grid64):
    U = LoopMatrix.constant(grid64, expm(su2_from_r3(np.array([0.3, -0.2, 0.5]))))
    xi = ConstantPotential(grid64, np.zeros((2, 2)))
    rep = frame_growth_check(xi, CoverPoint.from_z(1.0), U, radial_path(1.0, 0.5, 2))
    assert rep.length == 0 and rep.norm_start == pytest.approx(rep.norm_end)
    assert rep.passed and rep.margin == pytest.approx(1 - 1 / rep.C)


def test_growth_delaunay_radial(grid64):
    spec = PotentialSpec.delaunay(0.01)
    start = CoverPoint.from_z(1.0)
    rep = frame_growth_check(spec.evaluator(grid64), start, z_pow_A(spec.residue, start, grid64),
                             radial_path(1.0, 0.1, 3))
    assert rep.passed and rep.margin > 0
    assert rep.length > 0


def test_growth_R_to_one(grid64):
    spec = PotentialSpec.delaunay(0.01)
    start = CoverPoint.from_z(1.0)
    rep = frame_growth_check(spec.evaluator(grid64), start, z_pow_A(spec.residue, start, grid64),
                             radial_path(1.0, 0.1, 3), R=1.0 + 1e-6)
    assert rep.passed
    assert rep.bound_forward == pytest.approx(rep.C * rep.norm_end, rel=1e-5)
    assert 0.9 < rep.norm_start < 1.1 and 0.9 < rep.norm_end < 1.1


def test_growth_perturbed_random_paths(grid64, rng):
    spec = bundled("spherical_admissible")
    from dpwlab.analysis import build_perturbed_end
    end = build_perturbed_end(spec, grid64, fit=False)
    w0 = CoverPoint.from_z(0.2)
    for _ in range(2):
        pts = [CoverPoint(math.log(0.2) + rng.uniform(-2.5, 0), rng.uniform(-4, 4)) for _ in range(3)]
        rep = frame_growth_check(end.xi, end.z_of_w(w0),
                                 end.original_from_normalized(end.zap.frame_samples(w0.log, with_M=False),
                                                              end.z_of_w(w0)),
                                 [end.z_of_w(p) for p in pts])
        assert rep.passed


def test_annulus_norm_rejects_arrays():
    with pytest.raises(TypeError):
        annulus_norm(np.eye(2), 1.1)
