import csv

import numpy as np
import pytest

from plaplab.dnmap import (
    BoundaryDictionary,
    boundary_bump,
    bump_dictionary,
    default_dictionary,
    dn_pairing,
    dn_table,
    pairing_from_solution,
    write_table_csv,
)
from plaplab.errors import InvalidArgument
from plaplab.forward import solve
from plaplab.geometry import build_structured_mesh, gradient, interpolate


@pytest.fixture(scope="module")
def mesh():
    return build_structured_mesh(n=8)


def lin(mesh, fn):
    return interpolate(mesh, fn)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_pairing_examples(mesh, p):
    f = lin(mesh, lambda x, y: x)
    assert dn_pairing(mesh, 1.0, None, p, f, f).value == pytest.approx(1.0, rel=1e-12)
    assert dn_pairing(mesh, 3.0, None, p, f, f).value == pytest.approx(3.0, rel=1e-12)
    g = lin(mesh, lambda x, y: x + y)
    assert dn_pairing(mesh, 1.0, None, p, g, g).value == pytest.approx(2 ** (p / 2), rel=1e-12)


def test_pairing_report(mesh):
    f = lin(mesh, lambda x, y: x)
    r = dn_pairing(mesh, 1.0, None, 2.0, f, f, f_id="a", g_id="b")
    assert (r.f_id, r.g_id) == ("a", "b")
    assert r.solver_report.iterations == 0
    again = dn_pairing(mesh, 1.0, None, 2.0, f, 2 * f, solution=r.solver_report)
    assert again.value == pytest.approx(2.0)


def test_table_p2_identity(mesh):
    d = BoundaryDictionary((("x1", lin(mesh, lambda x, y: x)), ("x2", lin(mesh, lambda x, y: y))))
    t = dn_table(mesh, 1.0, None, 2.0, d)
    # direct quadrature: grad x1 . grad x2 = 0 on every cell
    np.testing.assert_allclose(t.values, np.eye(2), atol=1e-12)
    assert t.labels == ["x1", "x2"] and not t.failures


def test_table_sign_symmetry(mesh):
    f = lin(mesh, lambda x, y: x + 0.3 * y**2)
    d = BoundaryDictionary((("f", f), ("-f", -f)))
    t = dn_table(mesh, 1.0, None, 3.0, d)
    assert t.diagonal[0] == pytest.approx(t.diagonal[1], rel=1e-8)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_energy_identity_and_threads(mesh, p):
    d = default_dictionary(mesh, bumps=4)
    t1 = dn_table(mesh, 1.0, None, p, d)
    t4 = dn_table(mesh, 1.0, None, p, d, threads=4)
    assert np.array_equal(t1.values, t4.values)
    energies = np.array([s.energy for s in t1.solutions])
    np.testing.assert_allclose(t1.diagonal, energies, rtol=1e-8)
    assert np.all(t1.diagonal >= 0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_extension_independence(mesh, rng, p):
    sigma = 1 + rng.random(mesh.n_cells)
    f = boundary_bump(mesh, (0.5, 0.0), 0.5)
    g = lin(mesh, lambda x, y: np.cos(2 * x) + y)
    g2 = g.copy()
    interior = ~mesh.boundary_vertex_flags
    g2[interior] += rng.standard_normal(interior.sum())
    sol = solve(mesh, sigma, None, p, f)
    a = dn_pairing(mesh, sigma, None, p, f, g, solution=sol).value
    b = dn_pairing(mesh, sigma, None, p, f, g2, solution=sol).value
    # the gap is the residual applied to the interior change
    assert abs(a - b) <= 10 * sol.tolerance * np.linalg.norm(g2 - g) + 1e-14


@pytest.mark.parametrize("t", [0.5, 2.0, -1.0])
def test_p_homogeneity(mesh, t):
    p = 3.0
    f = boundary_bump(mesh, (1.0, 0.5), 0.6) + lin(mesh, lambda x, y: x)
    a = dn_pairing(mesh, 1.0, None, p, f, f).value
    b = dn_pairing(mesh, 1.0, None, p, t * f, t * f).value
    assert b == pytest.approx(abs(t) ** p * a, rel=1e-6)


def test_sigma_linearity(mesh, rng):
    sigma = 1 + rng.random(mesh.n_cells)
    f = boundary_bump(mesh, (0.0, 0.3), 0.5)
    a = dn_pairing(mesh, sigma, None, 1.7, f, f).value
    b = dn_pairing(mesh, 3 * sigma, None, 1.7, f, f).value
    assert b == pytest.approx(3 * a, rel=1e-8)


def test_pairing_volume_form(mesh, rng):
    u = rng.standard_normal(mesh.n_vertices)
    v = rng.standard_normal(mesh.n_vertices)
    gu, gv = gradient(mesh, u), gradient(mesh, v)
    p = 2.6
    expected = np.sum(np.linalg.norm(gu, axis=1) ** (p - 2) * np.einsum("ti,ti->t", gu, gv) * mesh.cell_areas)
    assert pairing_from_solution(mesh, 1.0, None, p, u, v) == pytest.approx(expected, rel=1e-12)


def test_dictionary_validation(mesh):
    with pytest.raises(InvalidArgument):
        BoundaryDictionary((("a", np.zeros(3)), ("a", np.zeros(3))))
    with pytest.raises(InvalidArgument):
        BoundaryDictionary(())
    with pytest.raises(InvalidArgument):
        BoundaryDictionary((("c", np.ones(mesh.n_vertices)),)).validate(mesh)
    with pytest.raises(InvalidArgument):
        BoundaryDictionary((("short", np.ones(3)),)).validate(mesh)


def test_bumps(mesh):
    d = bump_dictionary(mesh, 16)
    assert len(d) == 16 and d.labels[0] == "bump00"
    for _, v in d:
        assert np.all(v[~mesh.boundary_vertex_flags] == 0.0)
        assert v.max() == pytest.approx(1.0)
    # equispaced around the perimeter: every boundary vertex is covered
    cover = sum(v for _, v in d)
    assert np.all(cover[mesh.boundary_vertex_flags] > 0)


def test_default_dictionary_labels(mesh):
    d = default_dictionary(mesh, bumps=2)
    assert d.labels == ["x1", "x2", "x1+x2", "x1-x2", "bump00", "bump01"]


def test_failures_recorded_not_fatal(mesh):
    d = default_dictionary(mesh, bumps=2)
    t = dn_table(mesh, 1.0, None, 1.3, d, max_iter=1, eps_schedule=(1e-7,))
    # the four affine entries are exact from the start; bumps need iterations
    assert set(t.failures) == {"bump00", "bump01"}
    assert np.isnan(t.values[4:]).all() and np.isfinite(t.values[:4]).all()


def test_write_csv(tmp_path, mesh):
    d = BoundaryDictionary((("x1", lin(mesh, lambda x, y: x)), ("x2", lin(mesh, lambda x, y: y))))
    t = dn_table(mesh, 1.0, None, 2.0, d)
    write_table_csv(tmp_path / "t.csv", t)
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["f\\g", "x1", "x2"]
    assert rows[1][0] == "x1" and float(rows[1][1]) == pytest.approx(1.0)
