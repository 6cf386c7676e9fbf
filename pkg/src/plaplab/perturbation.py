"""Gradient stability under coefficient perturbations.

Covers the L^p and L^inf gradient-difference ladders, the perturbed linear
solution with |grad u| >= 1/2, an empirical calibration of how large a
perturbation of (1, I) keeps that bound, and a discrete check of the
L^p / C^beta interpolation inequality for the sup norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from plaplab.errors import InvalidArgument
from plaplab.fields import holder_report
from plaplab.forward import (
    DirichletProblem,
    Solution,
    _check_p,
    _matrix_array,
    _sigma_array,
    solve_dirichlet,
)
from plaplab.geometry import Mesh, gradient, interpolate

__all__ = [
    "DEFAULT_LADDER",
    "StabilityStudy",
    "lp_norm_cells",
    "fit_exponent",
    "stability_exponent",
    "gradient_stability_study",
    "perturbation_size",
    "nonvanishing_gradient_solution",
    "smooth_perturbation",
    "calibrate_eps",
    "interpolation_check",
]

DEFAULT_LADDER = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


def stability_exponent(p: float) -> float:
    """min{1/(p-1), 1}."""
    return min(1.0 / (p - 1.0), 1.0)


def lp_norm_cells(mesh: Mesh, vectors: np.ndarray, p: float) -> float:
    """(sum_T |v_T|^p |T|)^(1/p) for cellwise vectors."""
    mag = np.linalg.norm(vectors, axis=1)
    return float(np.dot(mag**p, mesh.cell_areas) ** (1.0 / p))


def fit_exponent(eps, values) -> float:
    """Least-squares slope of log(values) against log(eps); NaN if any value is 0."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0.0) or len(eps) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(eps), np.log(values), 1)
    return float(slope)


@dataclass(frozen=True, eq=False)
class StabilityStudy:
    eps_ladder: np.ndarray
    lp_ratios: np.ndarray
    sup_norms: np.ndarray
    fitted_exponent_lp: float
    fitted_exponent_sup: float
    p: float
    stability_exponent: float
    c_fit: float
    gradient_norm_ratios: np.ndarray = field(repr=False)
    i_dominates: np.ndarray = field(repr=False)

    def bound_holds(self) -> np.ndarray:
        """lp_ratio <= C_fit eps^exponent on each ladder entry (true by construction of C_fit)."""
        return self.lp_ratios <= self.c_fit * self.eps_ladder**self.stability_exponent * (1 + 1e-12)


def _perturbed(mesh, sigma0, A0, direction, eps, k):
    dsigma, dA = direction
    s = sigma0 + eps * dsigma
    A = A0 + eps * dA
    if np.any(~(s > 0)):
        raise InvalidArgument(f"ladder entry {k} (eps={eps}) leaves sigma non-positive")
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    if np.any(~(A[:, 0, 0] > 0)) or np.any(~(det > 0)):
        raise InvalidArgument(f"ladder entry {k} (eps={eps}) leaves A not positive definite")
    return s, A


def gradient_stability_study(
    mesh: Mesh, sigma0, A0, p, f, direction, eps_ladder=DEFAULT_LADDER, **solver_kw
) -> StabilityStudy:
    """Solve with (sigma0 + eps dsigma, A0 + eps dA) along a ladder of eps.

    ``direction`` is ``(dsigma, dA)``; either may be None for no change.
    Every solve uses the same boundary data ``f``.
    """
    p = _check_p(p)
    ladder = np.asarray(eps_ladder, dtype=float)
    if ladder.size == 0 or np.any(ladder <= 0) or np.any(np.diff(ladder) >= 0):
        raise InvalidArgument("eps ladder must be positive and strictly decreasing")
    s0 = _sigma_array(mesh, sigma0)
    M0 = _matrix_array(mesh, A0)
    dsigma, dA = direction
    dsigma = np.zeros(mesh.n_cells) if dsigma is None else _sigma_array(mesh, dsigma)
    dA = np.zeros_like(M0) if dA is None else np.asarray(dA, dtype=float)
    perturbed = [_perturbed(mesh, s0, M0, (dsigma, dA), e, k) for k, e in enumerate(ladder)]

    u0 = solve_dirichlet(DirichletProblem(mesh, s0, M0, p, f), **solver_kw).u
    g0 = gradient(mesh, u0)
    n0 = lp_norm_cells(mesh, g0, p)
    lp, sup, gratio, idom = [], [], [], []
    for s, A in perturbed:
        u1 = solve_dirichlet(DirichletProblem(mesh, s, A, p, f), **solver_kw).u
        g1 = gradient(mesh, u1)
        diff = g1 - g0
        lp.append(lp_norm_cells(mesh, diff, p) / n0 if n0 > 0 else 0.0)
        sup.append(float(np.max(np.linalg.norm(diff, axis=1))))
        gratio.append(lp_norm_cells(mesh, g1, p) / n0 if n0 > 0 else 1.0)
        if p >= 2.0:
            m0 = np.linalg.norm(g0, axis=1)
            m1 = np.linalg.norm(g1, axis=1)
            dm = np.linalg.norm(diff, axis=1)
            I = float(np.dot((m1 + m0) ** (p - 2.0) * dm**2, mesh.cell_areas))
            J = float(np.dot(dm**p, mesh.cell_areas))
            idom.append(J <= I * (1 + 1e-12) + 1e-300)
        else:
            idom.append(True)
    lp = np.array(lp)
    sup = np.array(sup)
    expo = stability_exponent(p)
    c_fit = float(np.max(lp / ladder**expo))
    return StabilityStudy(
        eps_ladder=ladder,
        lp_ratios=lp,
        sup_norms=sup,
        fitted_exponent_lp=fit_exponent(ladder, lp),
        fitted_exponent_sup=fit_exponent(ladder, sup),
        p=p,
        stability_exponent=expo,
        c_fit=c_fit,
        gradient_norm_ratios=np.array(gratio),
        i_dominates=np.array(idom),
    )


def perturbation_size(mesh: Mesh, sigma, A) -> float:
    """||sigma - 1||_inf + ||A - I||_inf, the latter as the largest cellwise spectral norm."""
    s = _sigma_array(mesh, sigma)
    M = _matrix_array(mesh, A) - np.eye(2)
    spec = np.linalg.norm(M, ord=2, axis=(1, 2))
    return float(np.max(np.abs(s - 1.0)) + np.max(spec))


def nonvanishing_gradient_solution(mesh: Mesh, sigma, A, p, **solver_kw) -> tuple[Solution, float]:
    """Solve with boundary data x1; return the solution and min over cells of |grad u|."""
    f = interpolate(mesh, lambda x, y: x)
    sol = solve_dirichlet(DirichletProblem(mesh, sigma, A, p, f), **solver_kw)
    return sol, float(np.min(np.linalg.norm(gradient(mesh, sol.u), axis=1)))


def smooth_perturbation(mesh: Mesh, rng: np.random.Generator, modes: int = 3):
    """Random smooth (sigma, A) directions sampled at centroids, each with unit sup norm.

    The scalar part has max |ds| = 1; the matrix part is symmetric with
    largest cellwise spectral norm 1.
    """
    c = mesh.centroids

    def field_():
        out = np.zeros(mesh.n_cells)
        for _ in range(modes):
            k = rng.integers(-2, 3, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            out += rng.normal() * np.cos(2 * np.pi * (k[0] * c[:, 0] + k[1] * c[:, 1]) + phase)
        m = np.max(np.abs(out))
        return out / m if m > 0 else out

    ds = field_()
    a, b, d = field_(), field_(), field_()
    dA = np.stack([np.stack([a, b], -1), np.stack([b, d], -1)], axis=1)
    spec = np.linalg.norm(dA, ord=2, axis=(1, 2)).max()
    return ds, dA / spec


@dataclass(frozen=True, eq=False)
class Calibration:
    p: float
    ladder: np.ndarray
    min_gradients: np.ndarray  # (len(ladder), n_tests)
    holds: np.ndarray  # per ladder entry, all tests
    eps_largest: float
    eps_breakdown: float


def calibrate_eps(
    mesh: Mesh, p, ladder=(0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 1.8),
    tests: int = 4, rng: np.random.Generator | None = None, **solver_kw,
) -> Calibration:
    """Largest perturbation size eps with min |grad u| >= 1/2 for a fixed test set.

    Each test direction (ds, dA) from :func:`smooth_perturbation` is applied
    as sigma = 1 + (eps/2) ds, A = I + (eps/2) dA, so that
    perturbation_size equals eps. ``eps_largest`` is the largest ladder
    value where all tests pass; ``eps_breakdown`` the first one where some
    test fails (inf if none does).
    """
    p = _check_p(p)
    ladder = np.sort(np.asarray(ladder, dtype=float))
    if np.any(ladder <= 0) or np.any(ladder >= 2):
        raise InvalidArgument("calibration ladder must lie in (0, 2) to keep the coefficients positive")
    rng = np.random.default_rng(0) if rng is None else rng
    directions = [smooth_perturbation(mesh, rng) for _ in range(tests)]
    mins = np.zeros((len(ladder), tests))
    for i, eps in enumerate(ladder):
        for j, (ds, dA) in enumerate(directions):
            s = 1.0 + 0.5 * eps * ds
            A = np.eye(2) + 0.5 * eps * dA
            _, mins[i, j] = nonvanishing_gradient_solution(mesh, s, A, p, **solver_kw)
    holds = np.all(mins >= 0.5, axis=1)
    largest = float(ladder[holds].max()) if holds.any() else 0.0
    fails = np.flatnonzero(~holds)
    breakdown = float(ladder[fails[0]]) if fails.size else float("inf")
    return Calibration(p, ladder, mins, holds, largest, breakdown)


class InterpolationCheck(NamedTuple):
    lhs: float
    rhs: float
    ratio: float


def interpolation_check(f, mesh: Mesh, p, beta, theta) -> InterpolationCheck:
    """Compare ||f||_inf with ||f||_Lp^(1-theta) ||f||_C^beta^theta on a mesh.

    theta must lie in ((2/p)/(beta + 2/p), 1]. The L^p norm uses vertex-lumped
    cell quadrature; the C^beta norm is sup plus the vertex-pair seminorm.
    """
    p = _check_p(p)
    if not 0.0 < beta < 1.0:
        raise InvalidArgument(f"beta must lie in (0, 1), got {beta}")
    lo = (2.0 / p) / (beta + 2.0 / p)
    if not lo < theta <= 1.0:
        raise InvalidArgument(f"theta must lie in ({lo:.6g}, 1], got {theta}")
    f = np.asarray(f, dtype=float)
    lhs = float(np.max(np.abs(f)))
    m0 = float(np.dot(np.mean(np.abs(f[mesh.triangles]) ** p, axis=1), mesh.cell_areas) ** (1.0 / p))
    m1 = holder_report(f, mesh.vertices, beta).norm
    rhs = m0 ** (1.0 - theta) * m1**theta
    return InterpolationCheck(lhs, rhs, lhs / rhs if rhs > 0 else float("nan"))
