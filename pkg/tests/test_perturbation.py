import numpy as np
import pytest

from plaplab.errors import InvalidArgument
from plaplab.geometry import build_structured_mesh, interpolate
from plaplab.perturbation import (
    calibrate_eps,
    fit_exponent,
    gradient_stability_study,
    interpolation_check,
    lp_norm_cells,
    nonvanishing_gradient_solution,
    perturbation_size,
    smooth_perturbation,
    stability_exponent,
)
from plaplab.seeding import stream


@pytest.fixture(scope="module")
def mesh():
    return build_structured_mesh(n=10)


def bounded_direction(mesh, rng):
    ds = rng.uniform(-1, 1, mesh.n_cells)
    return ds, None


def test_exponent_helpers():
    assert stability_exponent(1.5) == 1.0 and stability_exponent(3.0) == 0.5
    assert fit_exponent([1e-1, 1e-2], [2e-2, 2e-3]) == pytest.approx(1.0)
    assert np.isnan(fit_exponent([1e-1, 1e-2], [0.0, 1.0]))
    assert lp_norm_cells(build_structured_mesh(n=2), np.ones((8, 2)), 2.0) == pytest.approx(np.sqrt(2))


def test_zero_direction(mesh):
    f = interpolate(mesh, lambda x, y: x + y**2)
    s = gradient_stability_study(mesh, 1.0, None, 3.0, f, (None, None))
    assert np.all(s.lp_ratios == 0) and np.all(s.sup_norms == 0)


def test_linear_case_first_order(mesh, rng):
    f = interpolate(mesh, lambda x, y: x)
    s = gradient_stability_study(mesh, 1.0, None, 2.0, f, bounded_direction(mesh, rng),
                                 eps_ladder=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4))
    assert s.fitted_exponent_lp >= 0.9


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_study_invariants(mesh, rng, p):
    f = interpolate(mesh, lambda x, y: x + 0.2 * np.sin(3 * y))
    ds, dA = smooth_perturbation(mesh, rng)
    s = gradient_stability_study(mesh, 1.0, None, p, f, (ds, dA))
    assert s.fitted_exponent_lp >= stability_exponent(p) - 0.1
    assert np.all(s.bound_holds()) and s.c_fit < 1e3
    assert np.all(s.lp_ratios >= 0)
    # sup norms shrink along the ladder, allowing 10 % solver noise
    assert np.all(s.sup_norms[1:] <= 1.1 * s.sup_norms[:-1])
    assert s.fitted_exponent_sup > 0
    assert np.all(s.gradient_norm_ratios[s.eps_ladder <= 0.1] <= 2.0)
    assert np.all(s.i_dominates)


def test_study_rejects_bad_ladder_and_class_violation(mesh):
    f = interpolate(mesh, lambda x, y: x)
    with pytest.raises(InvalidArgument):
        gradient_stability_study(mesh, 1.0, None, 2.0, f, (None, None), eps_ladder=(1e-2, 1e-1))
    with pytest.raises(InvalidArgument, match="entry 0"):
        gradient_stability_study(mesh, 1.0, None, 2.0, f, (np.full(mesh.n_cells, -20.0), None),
                                 eps_ladder=(1e-1, 1e-2))
    dA = np.broadcast_to(-20 * np.eye(2), (mesh.n_cells, 2, 2))
    with pytest.raises(InvalidArgument, match="not positive definite"):
        gradient_stability_study(mesh, 1.0, None, 2.0, f, (None, dA), eps_ladder=(1e-1, 1e-2))


def test_perturbation_size(mesh):
    A = np.broadcast_to(np.array([[1.0, 0.02], [0.02, 1.0]]), (mesh.n_cells, 2, 2))
    sigma = np.full(mesh.n_cells, 1.0)
    sigma[3] = 1.01
    assert perturbation_size(mesh, sigma, A) == pytest.approx(0.01 + 0.02)


def test_smooth_perturbation_normalised(mesh, rng):
    ds, dA = smooth_perturbation(mesh, rng)
    assert np.abs(ds).max() == pytest.approx(1.0)
    assert np.linalg.norm(dA, ord=2, axis=(1, 2)).max() == pytest.approx(1.0)
    np.testing.assert_array_equal(dA, dA.transpose(0, 2, 1))


def test_nonvanishing_unperturbed(mesh):
    sol, g = nonvanishing_gradient_solution(mesh, 1.0, None, 2.5)
    assert g == pytest.approx(1.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_nonvanishing_small_perturbation(mesh, rng, p):
    sigma = 1.0 + 0.01 * rng.uniform(-1, 1, mesh.n_cells)
    _, g = nonvanishing_gradient_solution(mesh, sigma, None, p)
    assert g >= 0.5


def test_large_perturbation_reported(mesh):
    c = mesh.centroids
    D = (np.abs(c[:, 0] - 0.5) < 0.125) & (np.abs(c[:, 1] - 0.5) < 0.125)
    _, g = nonvanishing_gradient_solution(mesh, 1.0 + 5.0 * D, None, 2.0)
    assert 0.0 < g < 1.0


def test_calibration(mesh):
    ladder = (0.01, 0.1, 0.5, 1.0, 1.5, 1.9)
    a = calibrate_eps(mesh, 2.0, ladder=ladder, tests=3, rng=stream(1, "cal"))
    b = calibrate_eps(mesh, 2.0, ladder=ladder, tests=3, rng=stream(1, "cal"))
    assert np.array_equal(a.min_gradients, b.min_gradients)
    assert a.holds[0] and a.eps_largest >= 0.01
    assert a.eps_largest < a.eps_breakdown
    with pytest.raises(InvalidArgument):
        calibrate_eps(mesh, 2.0, ladder=(0.5, 2.5))


def test_interpolation_constant(mesh):
    r = interpolation_check(np.ones(mesh.n_vertices), mesh, 3.0, 0.5, 0.9)
    assert (r.lhs, r.rhs, r.ratio) == pytest.approx((1.0, 1.0, 1.0))


def test_interpolation_scaling(mesh):
    f = interpolate(mesh, lambda x, y: np.exp(-10 * ((x - 0.3) ** 2 + y**2)))
    a = interpolation_check(f, mesh, 3.0, 0.5, 0.8)
    b = interpolation_check(7.5 * f, mesh, 3.0, 0.5, 0.8)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-12)


def test_interpolation_bump_family_bounded():
    mesh = build_structured_mesh(n=32)
    ratios = []
    for w in (0.5, 0.25, 0.125):
        f = interpolate(mesh, lambda x, y: np.clip(1 - np.hypot(x - 0.5, y - 0.5) / w, 0, None))
        ratios.append(interpolation_check(f, mesh, 4.0, 0.5, 0.9).ratio)
    assert max(ratios) <= 1.0


@pytest.mark.parametrize("beta,theta", [(0.5, 0.5), (0.5, 1.1), (1.0, 0.9), (0.0, 0.9)])
def test_interpolation_ranges(mesh, beta, theta):
    # with p = 3, beta = 0.5 the admissible theta range is (4/7, 1]
    with pytest.raises(InvalidArgument):
        interpolation_check(np.ones(mesh.n_vertices), mesh, 3.0, beta, theta)
