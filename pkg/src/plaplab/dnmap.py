"""The nonlinear Dirichlet-to-Neumann pairing and pairing tables.

<Lambda_sigma(f), g> is evaluated by the volume form

    sum_T sigma_T (A g_u . g_u)^((p-2)/2) (A g_u . g_v) |T|

with u the discrete solution for data f and v the linear interpolant of g.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from plaplab.errors import ConvergenceFailure, InvalidArgument
from plaplab.forward import DirichletProblem, Solution, _matrix_array, _sigma_array, solve_dirichlet
from plaplab.geometry import Mesh, gradient, interpolate

__all__ = [
    "DNPairing",
    "BoundaryDictionary",
    "pairing_from_solution",
    "dn_pairing",
    "dn_table",
    "DNTable",
    "default_dictionary",
    "bump_dictionary",
    "boundary_bump",
    "write_table_csv",
]


@dataclass(frozen=True, eq=False)
class DNPairing:
    value: float
    f_id: str
    g_id: str
    solver_report: Solution


@dataclass(frozen=True, eq=False)
class BoundaryDictionary:
    """Labelled nodal functions; only their boundary values matter."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((str(label), np.asarray(v, dtype=float)) for label, v in self.entries)
        labels = [label for label, _ in entries]
        if len(set(labels)) != len(labels):
            raise InvalidArgument("dictionary labels must be unique")
        if not entries:
            raise InvalidArgument("dictionary is empty")
        object.__setattr__(self, "entries", entries)

    def validate(self, mesh: Mesh) -> None:
        b = mesh.boundary_vertex_flags
        for label, v in self.entries:
            if v.shape != (mesh.n_vertices,):
                raise InvalidArgument(f"dictionary entry {label!r} does not match the mesh")
        if not any(np.ptp(v[b]) > 0 for _, v in self.entries):
            raise InvalidArgument("dictionary needs at least one entry with non-constant boundary values")

    @property
    def labels(self) -> list:
        return [label for label, _ in self.entries]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def pairing_from_solution(mesh: Mesh, sigma, A, p, u, g) -> float:
    """Volume-form pairing for a given solution ``u`` and extension ``g``."""
    s = _sigma_array(mesh, sigma)
    M = _matrix_array(mesh, A)
    gu = gradient(mesh, u)
    gv = gradient(mesh, g)
    Agu = np.einsum("tij,tj->ti", M, gu)
    q = np.einsum("ti,ti->t", Agu, gu)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(q > 0.0, q ** (0.5 * p - 1.0), 0.0)
    return float(np.dot(s * w * np.einsum("ti,ti->t", Agu, gv), mesh.cell_areas))


def dn_pairing(mesh: Mesh, sigma, A, p, f, g, f_id: str = "f", g_id: str = "g", solution=None, **solver_kw) -> DNPairing:
    """<Lambda_sigma(f), g>; ``solution`` may be passed to reuse a solve for f."""
    if solution is None:
        solution = solve_dirichlet(DirichletProblem(mesh, sigma, A, p, f), **solver_kw)
    value = pairing_from_solution(mesh, sigma, A, float(p), solution.u, np.asarray(g, dtype=float))
    return DNPairing(value, f_id, g_id, solution)


@dataclass(frozen=True, eq=False)
class DNTable:
    labels: list
    values: np.ndarray
    solutions: list
    failures: dict

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values)


def dn_table(mesh: Mesh, sigma, A, p, dictionary: BoundaryDictionary, threads: int = 1, **solver_kw) -> DNTable:
    """Table of <Lambda(f_i), f_j> over a dictionary.

    Solver failures are recorded in ``failures`` (label -> message) and leave
    NaN rows; they do not abort the table.
    """
    dictionary.validate(mesh)
    entries = list(dictionary)

    def run(entry):
        label, f = entry
        try:
            return solve_dirichlet(DirichletProblem(mesh, sigma, A, p, f), **solver_kw), None
        except ConvergenceFailure as exc:
            return None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, entries))
    else:
        results = [run(e) for e in entries]

    m = len(entries)
    values = np.full((m, m), np.nan)
    failures = {}
    solutions = []
    for i, ((label, _), (sol, err)) in enumerate(zip(entries, results)):
        solutions.append(sol)
        if sol is None:
            failures[label] = err
            continue
        for j, (_, g) in enumerate(entries):
            values[i, j] = pairing_from_solution(mesh, sigma, A, float(p), sol.u, g)
    return DNTable(dictionary.labels, values, solutions, failures)


def boundary_bump(mesh: Mesh, center, width: float) -> np.ndarray:
    """Hat-shaped bump in arclength around ``center`` on the rectangle boundary, zero inside."""
    x = mesh.vertices
    lo, hi = x.min(axis=0), x.max(axis=0)
    perim = 2.0 * float(np.sum(hi - lo))
    s = _arclength(x, lo, hi)
    sc = _arclength(np.asarray(center, dtype=float)[None], lo, hi)[0]
    d = np.abs(s - sc)
    d = np.minimum(d, perim - d)
    vals = np.clip(1.0 - d / width, 0.0, None)
    return np.where(mesh.boundary_vertex_flags, vals, 0.0)


def _arclength(x, lo, hi):
    w, h = hi - lo
    X, Y = x[:, 0] - lo[0], x[:, 1] - lo[1]
    tol = 1e-12 * max(w, h)
    s = np.where(
        np.abs(Y) <= tol, X,
        np.where(np.abs(X - w) <= tol, w + Y,
                 np.where(np.abs(Y - h) <= tol, w + h + (w - X), 2 * w + h + (h - Y))),
    )
    return s


def bump_dictionary(mesh: Mesh, count: int = 16, width: float | None = None) -> BoundaryDictionary:
    """``count`` boundary bumps centred at equispaced boundary points."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    w, h = hi - lo
    perim = 2.0 * (w + h)
    if width is None:
        width = perim / count
    entries = []
    for k in range(count):
        s = perim * k / count
        if s <= w:
            c = (lo[0] + s, lo[1])
        elif s <= w + h:
            c = (hi[0], lo[1] + s - w)
        elif s <= 2 * w + h:
            c = (hi[0] - (s - w - h), hi[1])
        else:
            c = (lo[0], hi[1] - (s - 2 * w - h))
        entries.append((f"bump{k:02d}", boundary_bump(mesh, c, width)))
    return BoundaryDictionary(tuple(entries))


def default_dictionary(mesh: Mesh, bumps: int = 8, width: float | None = None) -> BoundaryDictionary:
    """Traces of x1, x2, x1 + x2, x1 - x2 followed by boundary bumps."""
    linear = [
        ("x1", interpolate(mesh, lambda x, y: x)),
        ("x2", interpolate(mesh, lambda x, y: y)),
        ("x1+x2", interpolate(mesh, lambda x, y: x + y)),
        ("x1-x2", interpolate(mesh, lambda x, y: x - y)),
    ]
    extra = list(bump_dictionary(mesh, bumps, width)) if bumps else []
    return BoundaryDictionary(tuple(linear + extra))


def write_table_csv(path, table: DNTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f\\g"] + list(table.labels))
        for label, row in zip(table.labels, table.values):
            w.writerow([label] + [repr(float(x)) for x in row])
