import numpy as np
import pytest

from plaplab.errors import ConvergenceFailure, InvalidArgument, PreconditionViolation
from plaplab.forward import (
    DirichletProblem,
    critical_fraction,
    default_eps_schedule,
    energy_gradient,
    p_energy,
    solve,
    solve_dirichlet,
)
from plaplab.geometry import build_structured_mesh, gradient, interpolate
from tests.oracles import layered_profile, linear_solve_p2, stiffness_p2


def x1(mesh):
    return interpolate(mesh, lambda x, y: x)


@pytest.fixture(scope="module")
def mesh8():
    return build_structured_mesh(n=8)


@pytest.mark.parametrize("p", [1.2, 2.0, 3.7])
def test_p_energy_examples(mesh8, p):
    assert p_energy(mesh8, 1.0, None, p, x1(mesh8)) == pytest.approx(1.0, rel=1e-13)
    v = interpolate(mesh8, lambda x, y: x + y)
    assert p_energy(mesh8, 1.0, None, p, v) == pytest.approx(2 ** (p / 2), rel=1e-13)
    assert p_energy(mesh8, 2.5, None, p, v) == pytest.approx(2.5 * 2 ** (p / 2), rel=1e-13)


@pytest.mark.parametrize("p", [1.0, 0.5, np.inf, np.nan])
def test_p_range(mesh8, p):
    with pytest.raises(InvalidArgument):
        p_energy(mesh8, 1.0, None, p, x1(mesh8))


def test_energy_gradient_affine_zero(mesh8, backend):
    r = energy_gradient(mesh8, 1.0, None, 3.0, x1(mesh8))
    assert np.abs(r).max() < 1e-13


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_gradient_finite_difference(rng, backend, p):
    mesh = build_structured_mesh(n=6)
    sigma = 1 + rng.random(mesh.n_cells)
    v = rng.standard_normal(mesh.n_vertices)
    r = energy_gradient(mesh, sigma, None, p, v)
    # a direction with a large component along r keeps the directional
    # derivative well away from zero, so roundoff in the difference quotient
    # stays below the tolerance
    d = r / np.linalg.norm(r) + 0.3 * rng.standard_normal(mesh.n_vertices) / np.sqrt(mesh.n_vertices)
    d[mesh.boundary_vertex_flags] = 0.0
    h = 1e-7
    fd = (p_energy(mesh, sigma, None, p, v + h * d) - p_energy(mesh, sigma, None, p, v - h * d)) / (2 * h)
    exact = r @ d
    assert fd == pytest.approx(exact, rel=1e-6)


def test_energy_gradient_p2_is_stiffness_action(rng, backend):
    mesh = build_structured_mesh(((0, 2), (0, 1)), 4)
    sigma = 1 + rng.random(mesh.n_cells)
    v = rng.standard_normal(mesh.n_vertices)
    K = stiffness_p2(mesh.vertices, mesh.triangles, sigma)
    expected = 2.0 * K @ v
    expected[mesh.boundary_vertex_flags] = 0.0
    np.testing.assert_allclose(energy_gradient(mesh, sigma, None, 2.0, v), expected, atol=1e-12)


def test_energy_gradient_rejects_negative_eps(mesh8):
    with pytest.raises(InvalidArgument):
        energy_gradient(mesh8, 1.0, None, 2.0, x1(mesh8), eps=-1.0)


@pytest.mark.parametrize("p", [1.3, 2.0, 5.0])
def test_affine_solution_exact(mesh8, backend, p):
    sol = solve(mesh8, 1.0, None, p, x1(mesh8))
    assert np.abs(sol.u - x1(mesh8)).max() <= 1e-10
    assert sol.energy == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_layered_closed_form(backend, p):
    mesh = build_structured_mesh(n=16)
    g, _ = layered_profile(mesh.vertices[:, 0], p)
    sigma = np.where(mesh.centroids[:, 0] < 0.5, 1.0, 2.0)
    # the exact solution's trace is g(x1), so that is the boundary data
    sol = solve(mesh, sigma, None, p, g)
    assert np.abs(sol.u - g).max() <= 1e-6


def test_layered_refinement_unaligned():
    # n odd puts the interface inside a cell column, giving a genuine O(h) error
    errs = []
    for n in (9, 17, 33):
        mesh = build_structured_mesh(n=n)
        g, _ = layered_profile(mesh.vertices[:, 0], 2.0)
        sigma = np.where(mesh.centroids[:, 0] < 0.5, 1.0, 2.0)
        errs.append(np.abs(solve(mesh, sigma, None, 2.0, g).u - g).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.diff(errs) < 0)
    assert orders[-1] >= 0.9


def test_p2_matches_linear_oracle(rng, backend):
    mesh = build_structured_mesh(n=7)
    sigma = 1 + 2 * rng.random(mesh.n_cells)
    X = rng.standard_normal((mesh.n_cells, 2, 2))
    A = np.einsum("tij,tkj->tik", X, X) + 0.5 * np.eye(2)
    f = interpolate(mesh, lambda x, y: np.sin(3 * x) + y**2)
    u_ref = linear_solve_p2(mesh.vertices, mesh.triangles, mesh.boundary_vertex_flags, sigma, f, A)
    sol = solve(mesh, sigma, A, 2.0, f)
    assert np.abs(sol.u - u_ref).max() <= 1e-8


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_solution_report_and_minimality(rng, backend, p):
    mesh = build_structured_mesh(n=8)
    sigma = 1 + rng.random(mesh.n_cells)
    f = interpolate(mesh, lambda x, y: np.cos(2 * x) * (1 + y))
    sol = solve(mesh, sigma, None, p, f)
    b = mesh.boundary_vertex_flags
    assert np.array_equal(sol.u[b], f[b])
    assert sol.residual_norm <= sol.tolerance
    assert sol.regularization_eps == default_eps_schedule(p)[-1]
    assert all(b_ <= a_ * (1 + 1e-12) for a_, b_ in zip(sol.stage_energies, sol.stage_energies[1:]))
    E = p_energy(mesh, sigma, None, p, sol.u)
    for _ in range(100):
        w = rng.standard_normal(mesh.n_vertices)
        w[b] = 0.0
        assert p_energy(mesh, sigma, None, p, sol.u + 1e-3 * w) >= E - 1e-10


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_homogeneity(p):
    mesh = build_structured_mesh(n=8)
    f = interpolate(mesh, lambda x, y: x * y + np.sin(y))
    s1 = solve(mesh, 1.0, None, p, f)
    for t in (0.5, 3.0):
        st = solve(mesh, 1.0, None, p, t * f)
        assert np.abs(st.u - t * s1.u).max() <= 1e-7 * t
        assert st.energy == pytest.approx(t**p * s1.energy, rel=1e-8)


def test_constant_data_gives_constant_solution(mesh8, backend):
    for p in (1.5, 3.0):
        sol = solve(mesh8, 1.0, None, p, np.full(mesh8.n_vertices, 2.5))
        assert np.all(sol.u == 2.5)


def test_critical_fraction(mesh8):
    sol = solve(mesh8, 1.0, None, 2.0, x1(mesh8))
    assert critical_fraction(sol, mesh8, 0.99) == 0.0
    assert critical_fraction(np.full(mesh8.n_vertices, 1.0), mesh8, 1e-9) == 1.0
    with pytest.raises(InvalidArgument):
        critical_fraction(sol, mesh8, -1.0)


def test_critical_fraction_layered():
    mesh = build_structured_mesh(n=16)
    g, _ = layered_profile(mesh.vertices[:, 0], 3.0)
    sigma = np.where(mesh.centroids[:, 0] < 0.5, 1.0, 2.0)
    sol = solve(mesh, sigma, None, 3.0, g)
    gmin = np.linalg.norm(gradient(mesh, g), axis=1).min()
    assert critical_fraction(sol, mesh, 0.99 * gmin) == 0.0


def test_convergence_failure_carries_best_iterate(rng):
    mesh = build_structured_mesh(n=8)
    f = interpolate(mesh, lambda x, y: np.sin(4 * x) * np.cos(3 * y))
    with pytest.raises(ConvergenceFailure) as exc:
        solve(mesh, 1.0, None, 1.3, f, max_iter=1, eps_schedule=(1e-6,))
    assert exc.value.best_iterate is not None and exc.value.residual_norm > 0


def test_problem_validation(mesh8):
    with pytest.raises(InvalidArgument):
        DirichletProblem(mesh8, 1.0, None, 2.0, np.zeros(3))
    with pytest.raises(PreconditionViolation):
        DirichletProblem(mesh8, -1.0, None, 2.0, x1(mesh8))
    with pytest.raises(InvalidArgument):
        solve_dirichlet(DirichletProblem(mesh8, 1.0, None, 2.0, x1(mesh8)), tol=0.0)
    with pytest.raises(InvalidArgument):
        solve_dirichlet(DirichletProblem(mesh8, 1.0, None, 2.0, x1(mesh8)), eps_schedule=())


def test_constant_matrix_broadcast(mesh8):
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = solve(mesh8, 1.0, A, 3.0, x1(mesh8) ** 2)
    b = solve(mesh8, 1.0, np.broadcast_to(A, (mesh8.n_cells, 2, 2)), 3.0, x1(mesh8) ** 2)
    np.testing.assert_array_equal(a.u, b.u)
    with pytest.raises(InvalidArgument):
        DirichletProblem(mesh8, 1.0, np.eye(3), 2.0, x1(mesh8))
