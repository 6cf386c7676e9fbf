"""Dirichlet solves by minimising the discrete p-Dirichlet energy.

The regularised energy sum_T sigma_T (eps^2 + A_T g_T . g_T)^(p/2) |T| is
minimised over nodal functions that agree with the data on boundary
vertices, by damped Newton with Armijo backtracking and an eps continuation.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from plaplab import kernels
from plaplab.errors import ConvergenceFailure, InvalidArgument
from plaplab.fields import MatrixField, ScalarField
from plaplab.geometry import Mesh, gradient

log = logging.getLogger(__name__)

__all__ = [
    "DirichletProblem",
    "Solution",
    "p_energy",
    "energy_gradient",
    "default_eps_schedule",
    "solve_dirichlet",
    "solve",
    "critical_fraction",
]

ARMIJO_C = 1e-4
BACKTRACK = 0.5


def _sigma_array(mesh: Mesh, sigma) -> np.ndarray:
    if sigma is None:
        return np.ones(mesh.n_cells)
    if isinstance(sigma, ScalarField):
        s = sigma.cell_values
    elif np.isscalar(sigma):
        s = np.full(mesh.n_cells, float(sigma))
    else:
        s = np.asarray(sigma, dtype=float)
    if s.shape != (mesh.n_cells,):
        raise InvalidArgument(f"sigma has shape {s.shape}, mesh has {mesh.n_cells} cells")
    return np.ascontiguousarray(s, dtype=float)


def _matrix_array(mesh: Mesh, A) -> np.ndarray:
    if A is None:
        return np.ascontiguousarray(np.broadcast_to(np.eye(2), (mesh.n_cells, 2, 2)))
    M = A.cell_matrices if isinstance(A, MatrixField) else np.asarray(A, dtype=float)
    if M.shape == (2, 2):
        M = np.broadcast_to(M, (mesh.n_cells, 2, 2))
    if M.shape != (mesh.n_cells, 2, 2):
        raise InvalidArgument(f"A has shape {M.shape}, expected ({mesh.n_cells}, 2, 2)")
    return np.ascontiguousarray(M, dtype=float)


def _check_p(p) -> float:
    p = float(p)
    if not (1.0 < p < np.inf):
        raise InvalidArgument(f"p must lie in (1, inf), got {p}")
    return p


def _nodal(mesh: Mesh, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mesh.n_vertices,):
        raise InvalidArgument(f"nodal function has shape {v.shape}, mesh has {mesh.n_vertices} vertices")
    return np.ascontiguousarray(v)


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    mesh: Mesh
    sigma: ScalarField
    A: MatrixField | None
    p: float
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _check_p(self.p))
        if not isinstance(self.sigma, ScalarField):
            object.__setattr__(self, "sigma", ScalarField(_sigma_array(self.mesh, self.sigma)))
        if self.A is None:
            object.__setattr__(self, "A", MatrixField.identity(self.mesh))
        elif not isinstance(self.A, MatrixField):
            object.__setattr__(self, "A", MatrixField(_matrix_array(self.mesh, self.A)))
        if len(self.sigma) != self.mesh.n_cells or len(self.A) != self.mesh.n_cells:
            raise InvalidArgument("coefficient fields do not match the mesh")
        f = _nodal(self.mesh, self.f).copy()
        f.setflags(write=False)
        object.__setattr__(self, "f", f)


@dataclass(frozen=True, eq=False)
class Solution:
    u: np.ndarray
    energy: float
    residual_norm: float
    iterations: int
    regularization_eps: float
    tolerance: float = float("nan")
    stage_energies: tuple = field(default_factory=tuple)


def p_energy(mesh: Mesh, sigma, A, p, v) -> float:
    """Discrete p-Dirichlet energy sum_T sigma_T (A_T g_T . g_T)^(p/2) |T|."""
    p = _check_p(p)
    return kernels.energy(
        mesh.shape_gradients, mesh.cell_areas, mesh.triangles, _nodal(mesh, v),
        _sigma_array(mesh, sigma), _matrix_array(mesh, A), p, 0.0,
    )


def _assemble_vector(mesh: Mesh, cell_values: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.triangles.ravel(), weights=cell_values.ravel(), minlength=mesh.n_vertices)


def energy_gradient(mesh: Mesh, sigma, A, p, v, eps: float = 0.0) -> np.ndarray:
    """Gradient of the regularised energy with respect to nodal values.

    Rows belonging to boundary vertices are zero.
    """
    p = _check_p(p)
    if eps < 0:
        raise InvalidArgument(f"eps must be non-negative, got {eps}")
    _, cell_res = kernels.energy_and_residual(
        mesh.shape_gradients, mesh.cell_areas, mesh.triangles, _nodal(mesh, v),
        _sigma_array(mesh, sigma), _matrix_array(mesh, A), p, float(eps),
    )
    r = _assemble_vector(mesh, cell_res)
    r[mesh.boundary_vertex_flags] = 0.0
    return r


class _InteriorPattern:
    """Sparsity bookkeeping for the interior-interior Hessian block."""

    def __init__(self, mesh: Mesh):
        interior = mesh.interior_vertices
        index = np.full(mesh.n_vertices, -1, dtype=np.int64)
        index[interior] = np.arange(len(interior))
        rows = np.repeat(index[mesh.triangles][:, :, None], 3, axis=2).ravel()
        cols = np.repeat(index[mesh.triangles][:, None, :], 3, axis=1).ravel()
        self.keep = (rows >= 0) & (cols >= 0)
        self.rows = rows[self.keep]
        self.cols = cols[self.keep]
        self.n = len(interior)
        self.interior = interior

    def matrix(self, local: np.ndarray) -> sp.csc_matrix:
        data = local.ravel()[self.keep]
        return sp.csc_matrix((data, (self.rows, self.cols)), shape=(self.n, self.n))


_patterns: "weakref.WeakKeyDictionary[Mesh, _InteriorPattern]" = weakref.WeakKeyDictionary()


def _pattern(mesh: Mesh) -> _InteriorPattern:
    pat = _patterns.get(mesh)
    if pat is None:
        pat = _patterns[mesh] = _InteriorPattern(mesh)
    return pat


def default_eps_schedule(p: float) -> tuple:
    """1e-1, 1e-2, ..., 1e-8, then 0 when p >= 2."""
    sched = tuple(10.0 ** -k for k in range(1, 9))
    return sched + (0.0,) if p >= 2.0 else sched


class _Energy:
    """Energy, residual and Hessian of the regularised problem for one eps."""

    def __init__(self, mesh, sigma, A, p, eps):
        self.mesh, self.sigma, self.A, self.p, self.eps = mesh, sigma, A, p, eps
        self.args = (mesh.shape_gradients, mesh.cell_areas, mesh.triangles)

    def value(self, u):
        return kernels.energy(*self.args, u, self.sigma, self.A, self.p, self.eps)

    def value_and_residual(self, u, interior):
        e, cell = kernels.energy_and_residual(*self.args, u, self.sigma, self.A, self.p, self.eps)
        return e, _assemble_vector(self.mesh, cell)[interior]

    def hessian(self, u, pattern):
        local = kernels.local_hessians(*self.args, u, self.sigma, self.A, self.p, self.eps)
        return pattern.matrix(local)


def _descent_direction(H, g):
    """Newton direction, falling back to shifted Newton and then steepest descent."""
    gnorm2 = float(g @ g)
    try:
        d = spla.spsolve(H, -g)
        if np.all(np.isfinite(d)) and d @ g < -1e-14 * np.sqrt(gnorm2 * (d @ d)):
            return d, "newton"
    except (RuntimeError, ValueError):
        pass
    diag = np.abs(H.diagonal())
    scale = float(diag.max()) if diag.size and diag.max() > 0 else 1.0
    eye = sp.identity(H.shape[0], format="csc")
    for mu in (1e-8, 1e-6, 1e-4, 1e-2, 1.0):
        try:
            d = spla.spsolve(H + mu * scale * eye, -g)
        except (RuntimeError, ValueError):
            continue
        if np.all(np.isfinite(d)) and d @ g < 0:
            return d, "shifted"
    return -g / scale, "gradient"


def _minimise(energy: _Energy, u, pattern, tol, max_iter):
    """Damped Newton on one regularised energy; returns (u, residual_norm, iterations)."""
    interior = pattern.interior
    E, g = energy.value_and_residual(u, interior)
    res = float(np.linalg.norm(g))
    best_u, best_res = u.copy(), res
    it = 0
    while res > tol and it < max_iter:
        it += 1
        d, kind = _descent_direction(energy.hessian(u, pattern), g)
        slope = float(g @ d)
        slack = 64.0 * np.finfo(float).eps * (abs(E) + 1.0)
        alpha = 1.0
        trial = u.copy()
        while True:
            trial[interior] = u[interior] + alpha * d
            E_trial = energy.value(trial)
            if E_trial <= E + ARMIJO_C * alpha * slope + slack:
                break
            alpha *= BACKTRACK
            if alpha < 1e-12:
                break
        if alpha < 1e-12:
            if kind != "gradient":
                d = -g
                slope = float(g @ d)
                alpha = 1.0 / max(float(np.abs(energy.hessian(u, pattern).diagonal()).max()), 1e-300)
                trial[interior] = u[interior] + alpha * d
                E_trial = energy.value(trial)
                if not E_trial <= E + slack:
                    break
            else:
                break
        u = trial
        E, g = energy.value_and_residual(u, interior)
        res = float(np.linalg.norm(g))
        if res < best_res:
            best_u, best_res = u.copy(), res
    if res > best_res:
        u, res = best_u, best_res
    return u, res, it


def solve_dirichlet(
    problem: DirichletProblem,
    tol: float | None = None,
    eps_schedule=None,
    max_iter: int = 100,
) -> Solution:
    """Minimise the discrete energy with Dirichlet data ``problem.f``.

    Args:
        problem: coefficients, exponent and boundary data.
        tol: absolute bound on the Euclidean norm of the interior residual;
            default ``1e-10 * (p_energy(f) + 1)``.
        eps_schedule: decreasing regularisation parameters; the last one
            defines the returned solution. Default :func:`default_eps_schedule`.
        max_iter: Newton iterations allowed per continuation stage.

    Raises:
        ConvergenceFailure: the final stage did not reach ``tol``.
    """
    mesh, p = problem.mesh, problem.p
    sigma = _sigma_array(mesh, problem.sigma)
    A = _matrix_array(mesh, problem.A)
    f = np.array(problem.f, dtype=float)
    scale = p_energy(mesh, sigma, A, p, f) + 1.0
    if tol is None:
        tol = 1e-10 * scale
    if not tol > 0:
        raise InvalidArgument(f"tol must be positive, got {tol}")
    schedule = tuple(default_eps_schedule(p) if eps_schedule is None else eps_schedule)
    if not schedule:
        raise InvalidArgument("empty eps schedule")
    pattern = _pattern(mesh)

    u = f.copy()
    total_it = 0
    stage_energies = []
    res = np.inf
    if pattern.n == 0:
        return Solution(u, p_energy(mesh, sigma, A, p, u), 0.0, 0, schedule[-1], tol, ())
    for k, eps in enumerate(schedule):
        last = k == len(schedule) - 1
        stage_tol = tol if last else max(tol, 1e-8 * scale)
        energy = _Energy(mesh, sigma, A, p, float(eps))
        u, res, it = _minimise(energy, u, pattern, stage_tol, max_iter)
        total_it += it
        stage_energies.append(energy.value(u))
        log.debug("eps=%g iterations=%d residual=%.3e", eps, it, res)
    if not res <= tol:
        raise ConvergenceFailure(
            f"residual {res:.3e} above tolerance {tol:.3e} after {total_it} iterations",
            best_iterate=u,
            residual_norm=res,
        )
    return Solution(
        u=u,
        energy=p_energy(mesh, sigma, A, p, u),
        residual_norm=res,
        iterations=total_it,
        regularization_eps=float(schedule[-1]),
        tolerance=float(tol),
        stage_energies=tuple(stage_energies),
    )


def solve(mesh: Mesh, sigma, A, p, f, **kwargs) -> Solution:
    """Shorthand for ``solve_dirichlet(DirichletProblem(mesh, sigma, A, p, f))``."""
    return solve_dirichlet(DirichletProblem(mesh, sigma, A, p, f), **kwargs)


def critical_fraction(solution, mesh: Mesh, threshold: float) -> float:
    """Area fraction of cells where |grad u| < threshold."""
    if threshold < 0:
        raise InvalidArgument(f"threshold must be non-negative, got {threshold}")
    u = solution.u if isinstance(solution, Solution) else solution
    gnorm = np.linalg.norm(gradient(mesh, u), axis=1)
    return float(np.sum(mesh.cell_areas[gnorm < threshold]) / mesh.total_area)
