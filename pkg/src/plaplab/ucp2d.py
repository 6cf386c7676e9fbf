"""Complex-gradient diagnostics for planar solutions (A = I).

With f = sigma u_x - i sigma u_y and F = |f|^a f at a = (p-2)/2, solutions of
div(sigma |grad u|^(p-2) grad u) = 0 satisfy the Beltrami-type system

    dF/dzbar = q1 dF/dz + q2 conj(dF/dz) + H(z, F).

The functions here evaluate that system on discrete solutions, build the
dual stream function, and scan for plateaus of |grad u|.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from plaplab.errors import InvalidArgument
from plaplab.forward import _check_p, _matrix_array, _sigma_array
from plaplab.geometry import Mesh, gradient

__all__ = [
    "ComplexGradientField",
    "BeltramiCoefficients",
    "complex_gradient",
    "beltrami_coefficients",
    "BeltramiResidual",
    "plane_fit_derivatives",
    "vertex_average",
    "beltrami_residual",
    "DualStream",
    "dual_stream_function",
    "PlateauReport",
    "plateau_scan",
    "near_zero_count",
]


@dataclass(frozen=True, eq=False)
class ComplexGradientField:
    f: np.ndarray
    a: float
    F: np.ndarray


def complex_gradient(mesh: Mesh, u, sigma, a: float) -> ComplexGradientField:
    """Cellwise f = sigma u_x - i sigma u_y and F_a = |f|^a f (0 where f = 0)."""
    if not a > -1.0:
        raise InvalidArgument(f"a must exceed -1, got {a}")
    s = _sigma_array(mesh, sigma)
    g = gradient(mesh, u)
    f = s * g[:, 0] - 1j * s * g[:, 1]
    mag = np.abs(f)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(mag > 0.0, mag**a * f, 0.0)
    return ComplexGradientField(f, float(a), F)


def _q_factors(p: float) -> tuple[float, float]:
    # signed real factors multiplying conj(F)/F and F/conj(F)
    r1 = (p - 2.0) / (p + 2.0)
    r2 = (p - 2.0) / (3.0 * p - 2.0)
    return -0.5 * (r1 + r2), -0.5 * (r2 - r1)


@dataclass(frozen=True)
class BeltramiCoefficients:
    q1_mag: float
    q2_mag: float
    p: float

    @property
    def total(self) -> float:
        return self.q1_mag + self.q2_mag


def beltrami_coefficients(p: float) -> BeltramiCoefficients:
    p = _check_p(p)
    k1, k2 = _q_factors(p)
    return BeltramiCoefficients(abs(k1), abs(k2), p)


def plane_fit_derivatives(mesh: Mesh, values: np.ndarray):
    """Least-squares plane fits of cell values over each cell and its edge neighbours.

    Returns (d/dx, d/dy, fitted) where ``fitted`` flags cells with all three
    neighbours; derivatives elsewhere are NaN. Works for complex values.
    """
    nbr = mesh.cell_neighbors
    full = np.all(nbr >= 0, axis=1)
    cells = np.flatnonzero(full)
    c = mesh.centroids
    idx = np.column_stack([cells, nbr[cells]])  # (K, 4)
    D = c[idx] - c[cells][:, None, :]  # (K, 4, 2)
    X = np.concatenate([np.ones(D.shape[:2] + (1,)), D], axis=2)  # (K, 4, 3)
    Y = values[idx]
    XtX = np.einsum("kij,kil->kjl", X, X)
    XtY = np.einsum("kij,ki->kj", X, Y)
    coef = np.linalg.solve(XtX, XtY[..., None])[..., 0]
    dx = np.full(mesh.n_cells, np.nan, dtype=coef.dtype)
    dy = np.full(mesh.n_cells, np.nan, dtype=coef.dtype)
    dx[cells] = coef[:, 1]
    dy[cells] = coef[:, 2]
    return dx, dy, full


def vertex_average(mesh: Mesh, cell_values) -> np.ndarray:
    """Area-weighted average of cell values around each vertex (a lossy promotion)."""
    cell_values = np.asarray(cell_values, dtype=float)
    w = np.repeat(mesh.cell_areas[:, None], 3, axis=1).ravel()
    tri = mesh.triangles.ravel()
    num = np.bincount(tri, weights=w * np.repeat(cell_values, 3), minlength=mesh.n_vertices)
    den = np.bincount(tri, weights=w, minlength=mesh.n_vertices)
    return num / den


@dataclass(frozen=True, eq=False)
class BeltramiResidual:
    normalized: float
    residual: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    q3: np.ndarray = field(repr=False)
    H_bound_holds: bool = True


def _dz(dx, dy):
    return 0.5 * (dx - 1j * dy)


def _dzbar(dx, dy):
    return 0.5 * (dx + 1j * dy)


def beltrami_residual(
    mesh: Mesh, u, sigma, p, sigma_vertex=None, zero_threshold: float = 1e-6
) -> BeltramiResidual:
    """Normalised L^2 residual of the Beltrami system for a discrete solution.

    dF/dz and dF/dzbar come from plane fits of the cellwise F over edge
    neighbourhoods. Derivatives of 1/sigma and sigma^(2-p) are the P1
    gradients of their vertex samples ``sigma_vertex`` (promoted from the
    cell values by :func:`vertex_average` when omitted). Only cells with a
    full neighbourhood and |F| > zero_threshold * max|F| enter; the norm is
    divided by ||dF/dz||_2 + ||F||_2 over the same cells.
    """
    p = _check_p(p)
    if mesh.n_cells < 32:
        raise InvalidArgument("mesh too coarse for neighbourhood fits (need n >= 4)")
    s = _sigma_array(mesh, sigma)
    sv = vertex_average(mesh, s) if sigma_vertex is None else np.asarray(sigma_vertex, dtype=float)
    if sv.shape != (mesh.n_vertices,):
        raise InvalidArgument("sigma_vertex must hold one value per vertex")
    F = complex_gradient(mesh, u, s, 0.5 * (p - 2.0)).F
    dx, dy, full = plane_fit_derivatives(mesh, F)
    if not full.any():
        raise InvalidArgument("no cell has a complete neighbourhood")
    Fz, Fzb = _dz(dx, dy), _dzbar(dx, dy)

    g_inv = gradient(mesh, 1.0 / sv)
    g_pow = gradient(mesh, sv ** (2.0 - p))
    inv_z, inv_zb = _dz(g_inv[:, 0], g_inv[:, 1]), _dzbar(g_inv[:, 0], g_inv[:, 1])
    pow_z, pow_zb = _dz(g_pow[:, 0], g_pow[:, 1]), _dzbar(g_pow[:, 0], g_pow[:, 1])
    Fc = np.conj(F)
    H = s * p / (p + 2.0) * (Fc * inv_z - F * inv_zb) - s ** (p - 2.0) * p / (3.0 * p - 2.0) * (
        Fc * pow_z + F * pow_zb
    )
    q3 = 2.0 * (s * p / (p + 2.0) * np.abs(inv_z) + s ** (p - 2.0) * p / abs(3.0 * p - 2.0) * np.abs(pow_z))

    absF = np.abs(F)
    cells = full & (absF > zero_threshold * max(absF.max(), 1e-300))
    k1, k2 = _q_factors(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        q1 = np.where(absF > 0, k1 * Fc / F, 0.0)
        q2 = np.where(absF > 0, k2 * F / Fc, 0.0)
    R = Fzb - q1 * Fz - q2 * np.conj(Fz) - H
    area = mesh.cell_areas[cells]
    num = np.sqrt(np.dot(np.abs(R[cells]) ** 2, area))
    den = np.sqrt(np.dot(np.abs(Fz[cells]) ** 2, area)) + np.sqrt(np.dot(absF[cells] ** 2, area))
    normalized = float(num / den) if den > 0 else 0.0
    bound = bool(np.all(np.abs(H) <= q3 * absF * (1 + 1e-12) + 1e-300))
    return BeltramiResidual(normalized, np.where(cells, R, np.nan), np.flatnonzero(cells), H, q3, bound)


@dataclass(frozen=True, eq=False)
class DualStream:
    """Stream function of the flux.

    ``midpoint_values`` hold the edge-midpoint (nonconforming P1) function
    whose broken gradient is the rotated flux; ``v`` is its nodal version,
    the average over incident cells of each cell's linear piece.
    """

    v: np.ndarray
    midpoint_values: np.ndarray = field(repr=False)
    dual_residual: float = 0.0
    flux_error: float = 0.0
    q: float = 2.0


def _flux(mesh: Mesh, u, sigma, p, A=None):
    g = gradient(mesh, u)
    s = _sigma_array(mesh, sigma)
    Ag = g if A is None else np.einsum("tij,tj->ti", _matrix_array(mesh, A), g)
    qf = np.einsum("ti,ti->t", Ag, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(qf > 0, qf ** (0.5 * p - 1.0), 0.0)
    return (s * w)[:, None] * Ag


def dual_stream_function(mesh: Mesh, u, sigma, p, A=None) -> DualStream:
    """Stream function v with grad v = (-J_y, J_x), J = sigma |A du.du|^((p-2)/2) A du.

    The rotated flux of a discrete solution is the broken gradient of a
    function that is linear on cells and continuous at edge midpoints, so v
    is found by walking a breadth-first spanning tree of the cell adjacency
    graph from cell 0: each newly reached cell fixes its unset midpoint
    values from its own rotated flux. Path independence holds up to the
    discrete divergence of J, i.e. the solver residual.

    ``dual_residual`` is the norm of the interior-edge energy gradient of v
    for (sigma^(1-q), q) with 1/p + 1/q = 1; ``flux_error`` the largest
    cellwise gap between J and the flux recovered from v.
    """
    p = _check_p(p)
    q = p / (p - 1.0)
    n_comp, _ = connected_components(mesh.cell_graph(), directed=False)
    if n_comp != 1:
        raise InvalidArgument("mesh cells are not edge-connected")
    J = _flux(mesh, u, sigma, p, A)
    RJ = np.column_stack([-J[:, 1], J[:, 0]])

    mid = mesh.edge_midpoints
    ce = mesh.cell_edges
    nbr = mesh.cell_neighbors
    w = np.full(len(mid), np.nan)
    seen = np.zeros(mesh.n_cells, dtype=bool)
    w[ce[0, 0]] = 0.0
    seen[0] = True
    queue = deque([0])
    while queue:
        t = queue.popleft()
        es = ce[t]
        ref = next(e for e in es if not np.isnan(w[e]))
        for e in es:
            if np.isnan(w[e]):
                w[e] = w[ref] + RJ[t] @ (mid[e] - mid[ref])
        for nb in nbr[t]:
            if nb >= 0 and not seen[nb]:
                seen[nb] = True
                queue.append(nb)

    # basis function of the edge opposite vertex k is 1 - 2 phi_k
    G = mesh.shape_gradients
    wc = w[ce]
    grad_w = -2.0 * np.einsum("tk,tkd->td", wc, G)
    back = np.column_stack([grad_w[:, 1], -grad_w[:, 0]])
    flux_err = float(np.max(np.linalg.norm(back - J, axis=1)))

    s = _sigma_array(mesh, sigma)
    mag = np.linalg.norm(grad_w, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(mag > 0, s ** (1.0 - q) * mag ** (q - 2.0), 0.0)
    dual_flux = q * (coef * mesh.cell_areas)[:, None] * grad_w
    local = -2.0 * np.einsum("td,tkd->tk", dual_flux, G)
    res = np.bincount(ce.ravel(), weights=local.ravel(), minlength=len(mid))
    interior_edge = np.bincount(ce.ravel(), minlength=len(mid)) == 2
    dual_residual = float(np.linalg.norm(res[interior_edge]))

    # vertex value of a cell's linear piece: w(m_i) + w(m_j) - w(m_k) at vertex k
    vert = wc.sum(axis=1)[:, None] - 2.0 * wc
    num = np.bincount(mesh.triangles.ravel(), weights=vert.ravel(), minlength=mesh.n_vertices)
    cnt = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)
    return DualStream(num / cnt, w, dual_residual, flux_err, q)


@dataclass(frozen=True)
class PlateauReport:
    count: int
    area_fraction: float
    largest_fraction: float
    red_flag: bool
    threshold: float
    component_fractions: tuple = ()


def plateau_scan(mesh: Mesh, u, threshold: float | None = None, flag_fraction: float = 0.05) -> PlateauReport:
    """Connected (edge-adjacent) cell sets where |grad u| < threshold.

    Default threshold is 1e-6 * max |grad u|; for a constant u every cell
    is below any positive threshold. ``red_flag`` marks a component larger
    than ``flag_fraction`` of the area while u itself is not constant.
    """
    u = np.asarray(u, dtype=float)
    gnorm = np.linalg.norm(gradient(mesh, u), axis=1)
    gmax = float(gnorm.max())
    if threshold is None:
        threshold = 1e-6 * gmax if gmax > 0 else 1.0
    if not threshold > 0:
        raise InvalidArgument(f"threshold must be positive, got {threshold}")
    low = gnorm < threshold
    cells = np.flatnonzero(low)
    if cells.size == 0:
        return PlateauReport(0, 0.0, 0.0, False, float(threshold))
    graph = mesh.cell_graph(low)
    _, labels = connected_components(graph, directed=False)
    fracs = np.bincount(labels[cells], weights=mesh.cell_areas[cells]) / mesh.total_area
    fracs = np.sort(fracs[fracs > 0])[::-1]
    scale = max(float(np.max(np.abs(u))), 1.0)
    nonconstant = float(np.ptp(u)) > 1e-12 * scale
    largest = float(fracs[0])
    return PlateauReport(
        count=int(fracs.size),
        area_fraction=float(fracs.sum()),
        largest_fraction=largest,
        red_flag=bool(nonconstant and largest > flag_fraction),
        threshold=float(threshold),
        component_fractions=tuple(float(x) for x in fracs),
    )


def near_zero_count(mesh: Mesh, u, sigma, p, rel: float = 1e-8) -> int:
    """Number of cells with |F| < rel * max |F|."""
    F = complex_gradient(mesh, u, sigma, 0.5 * (_check_p(p) - 2.0)).F
    a = np.abs(F)
    return int(np.count_nonzero(a < rel * a.max())) if a.max() > 0 else mesh.n_cells
