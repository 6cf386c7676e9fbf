"""Monotonicity inequality for ordered conductivities, and what it buys.

For sigma1, sigma2 and the sigma2-solution u2 with data f,

    (p-1) int sigma2 sigma1^(-1/(p-1)) (sigma1^(1/(p-1)) - sigma2^(1/(p-1))) |A du2.du2|^(p/2)
        <= <(Lambda_sigma1 - Lambda_sigma2) f, f>
        <= int (sigma1 - sigma2) |A du2.du2|^(p/2).

This module evaluates the three terms, checks the optimal Young parameter,
runs the positive-gap experiment behind interior uniqueness and builds a
detector for the set where sigma1 > sigma2.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from plaplab.dnmap import BoundaryDictionary, DNTable, dn_table, pairing_from_solution
from plaplab.errors import ConvergenceFailure, InvalidArgument, PreconditionViolation
from plaplab.forward import (
    DirichletProblem,
    _check_p,
    _matrix_array,
    _sigma_array,
    solve_dirichlet,
)
from plaplab.geometry import Mesh, gradient

__all__ = [
    "MonotonicityTriple",
    "DifferenceRegionEstimate",
    "lower_weight",
    "cell_energy_density",
    "monotonicity_triple",
    "dictionary_triples",
    "beta_bound",
    "beta_optimality_check",
    "uniqueness_experiment",
    "detect_difference_region",
    "jaccard",
]


@dataclass(frozen=True)
class MonotonicityTriple:
    lower: float
    middle: float
    upper: float
    f_id: str = "f"

    def sandwich_holds(self, tol: float) -> bool:
        return self.lower <= self.middle + tol and self.middle <= self.upper + tol

    def nonpositive(self, tol: float) -> bool:
        return max(self.lower, self.middle, self.upper) <= tol


def lower_weight(sigma1: np.ndarray, sigma2: np.ndarray, p: float) -> np.ndarray:
    """Cellwise (p-1) sigma2 / sigma1^(1/(p-1)) (sigma1^(1/(p-1)) - sigma2^(1/(p-1)))."""
    r = 1.0 / (p - 1.0)
    s1r = sigma1**r
    return (p - 1.0) * sigma2 / s1r * (s1r - sigma2**r)


def cell_energy_density(mesh: Mesh, A, p: float, u) -> np.ndarray:
    """|A grad u . grad u|^(p/2) per cell."""
    g = gradient(mesh, u)
    q = np.einsum("ti,tij,tj->t", g, _matrix_array(mesh, A), g)
    return np.maximum(q, 0.0) ** (0.5 * p)


def monotonicity_triple(mesh: Mesh, sigma1, sigma2, A, p, f, f_id: str = "f", **solver_kw) -> MonotonicityTriple:
    """Lower, middle and upper terms of the monotonicity inequality for data f.

    The middle term is the difference of two full-solve pairings
    <Lambda_sigma1 f, f> - <Lambda_sigma2 f, f>.
    """
    p = _check_p(p)
    s1 = _sigma_array(mesh, sigma1)
    s2 = _sigma_array(mesh, sigma2)
    u1 = solve_dirichlet(DirichletProblem(mesh, s1, A, p, f), **solver_kw).u
    u2 = solve_dirichlet(DirichletProblem(mesh, s2, A, p, f), **solver_kw).u
    return _triple_from_solutions(mesh, s1, s2, A, p, f, u1, u2, f_id)


def _triple_from_solutions(mesh, s1, s2, A, p, f, u1, u2, f_id):
    e2 = cell_energy_density(mesh, A, p, u2)
    area = mesh.cell_areas
    lower = float(np.dot(lower_weight(s1, s2, p) * e2, area))
    upper = float(np.dot((s1 - s2) * e2, area))
    f = np.asarray(f, dtype=float)
    middle = pairing_from_solution(mesh, s1, A, p, u1, f) - pairing_from_solution(mesh, s2, A, p, u2, f)
    return MonotonicityTriple(lower, middle, upper, f_id)


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _solve_or_fail(mesh, sigma, A, p, f, solver_kw):
    try:
        return solve_dirichlet(DirichletProblem(mesh, sigma, A, p, f), **solver_kw).u, None
    except ConvergenceFailure as exc:
        return None, str(exc)


def dictionary_triples(mesh: Mesh, sigma1, sigma2, A, p, dictionary: BoundaryDictionary, threads: int = 1, **solver_kw):
    """Triples for every dictionary entry.

    Returns ``(triples, failures, u2)``: triples in dictionary order for the
    entries whose two solves converged, a label -> message dict for the
    rest, and the sigma2 solutions (None where either solve failed). Entries are solved
    concurrently when ``threads > 1``; results are merged by index.
    """
    p = _check_p(p)
    s1 = _sigma_array(mesh, sigma1)
    s2 = _sigma_array(mesh, sigma2)
    dictionary.validate(mesh)

    def run(entry):
        label, f = entry
        u1, e1 = _solve_or_fail(mesh, s1, A, p, f, solver_kw)
        u2, e2 = _solve_or_fail(mesh, s2, A, p, f, solver_kw)
        return u1, u2, e1 or e2

    triples, failures, u2s = [], {}, []
    for (label, f), (u1, u2, err) in zip(dictionary, _map(run, list(dictionary), threads)):
        u2s.append(None if err is not None else u2)
        if err is not None:
            failures[label] = err
            continue
        triples.append(_triple_from_solutions(mesh, s1, s2, A, p, f, u1, u2, label))
    return triples, failures, u2s


def beta_bound(beta, p: float):
    """(1 + beta)^(p') / beta with p' = p / (p - 1)."""
    beta = np.asarray(beta, dtype=float)
    pp = p / (p - 1.0)
    return (1.0 + beta) ** pp / beta


@dataclass(frozen=True)
class BetaCheck:
    p: float
    betas: np.ndarray
    values: np.ndarray
    argmin: float
    unimodal: bool


def beta_optimality_check(p: float, beta_grid) -> BetaCheck:
    """Evaluate beta -> (1+beta)^(p')/beta on a grid and locate its minimum.

    The continuous minimiser is beta = p - 1; on the sorted, deduplicated
    grid the values must fall and then rise (``unimodal``).
    """
    p = _check_p(p)
    betas = np.asarray(beta_grid, dtype=float).ravel()
    if betas.size == 0:
        raise InvalidArgument("empty beta grid")
    if np.any(betas <= 0):
        raise InvalidArgument("beta values must be positive")
    b = np.unique(betas)
    v = beta_bound(b, p)
    k = int(np.argmin(v))
    d = np.diff(v)
    unimodal = bool(np.all(d[:k] < 0) and np.all(d[k:] > 0))
    return BetaCheck(p, b, v, float(b[k]), unimodal)


@dataclass(frozen=True, eq=False)
class UniquenessReport:
    triples: list
    max_middle: float
    certified_lower: float
    certified_by: str
    verdict: str
    region_cells: np.ndarray = field(repr=False)
    failures: dict = field(default_factory=dict)

    @property
    def gap_positive(self) -> bool:
        return self.verdict == "distinguishable"


def uniqueness_experiment(
    mesh: Mesh, sigma1, sigma2, A, p, dictionary: BoundaryDictionary, gap_tol: float = 1e-9,
    threads: int = 1, **solver_kw,
) -> UniquenessReport:
    """Positive-gap check for sigma1 >= sigma2 with sigma1 > sigma2 somewhere.

    For each dictionary entry the triple is computed; the certified lower
    bound is the lower-term integral restricted to E = {sigma1 > sigma2}
    for the entry with the largest middle term. ``verdict`` is
    "distinguishable" when the largest middle term exceeds ``gap_tol``
    (relative to the largest sigma2 energy), else "indistinguishable".
    Entries whose solves fail are listed in ``failures`` and skipped.
    """
    p = _check_p(p)
    s1 = _sigma_array(mesh, sigma1)
    s2 = _sigma_array(mesh, sigma2)
    if np.any(s1 < s2):
        bad = int(np.flatnonzero(s1 < s2)[0])
        raise PreconditionViolation(f"ordering sigma1 >= sigma2 fails at cell {bad}", cell=bad)
    region = s1 > s2
    w = lower_weight(s1, s2, p)
    triples, failures, u2s = dictionary_triples(mesh, s1, s2, A, p, dictionary, threads, **solver_kw)
    if not triples:
        raise ConvergenceFailure("no dictionary entry could be solved", best_iterate=None, residual_norm=np.inf)
    certs, energies = [], []
    for u2 in u2s:
        if u2 is None:
            continue
        e2 = cell_energy_density(mesh, A, p, u2)
        certs.append(float(np.dot((w * e2)[region], mesh.cell_areas[region])))
        energies.append(float(np.dot(s2 * e2, mesh.cell_areas)))
    middles = np.array([t.middle for t in triples])
    k = int(np.argmax(middles))
    scale = max(max(energies), 1e-300)
    verdict = "distinguishable" if middles[k] > gap_tol * scale else "indistinguishable"
    return UniquenessReport(
        triples=triples,
        max_middle=float(middles[k]),
        certified_lower=certs[k],
        certified_by=triples[k].f_id,
        verdict=verdict,
        region_cells=np.flatnonzero(region),
        failures=failures,
    )


@dataclass(frozen=True, eq=False)
class DifferenceRegionEstimate:
    cell_scores: np.ndarray
    detected: np.ndarray
    threshold: float
    gaps: np.ndarray = field(default=None, repr=False)

    @property
    def detected_cells(self) -> np.ndarray:
        return np.flatnonzero(self.detected)


def detect_difference_region(
    mesh: Mesh,
    oracle_table,
    sigma2,
    A,
    p,
    dictionary: BoundaryDictionary,
    quantile: float = 0.9,
    gap_tol: float = 1e-8,
    method: str = "monotonicity",
    threads: int = 1,
    **solver_kw,
) -> DifferenceRegionEstimate:
    """Estimate E = {sigma1 > sigma2} from the diagonal of a sigma1 pairing table.

    ``oracle_table`` holds <Lambda_sigma1 f_i, f_j> (a :class:`DNTable` or a
    square array) over ``dictionary``; sigma1 itself is not used. Per entry
    f the normalised gap is gap(f) = (<Lambda_1 f, f> - <Lambda_2 f, f>) /
    <Lambda_2 f, f>, zeroed when below ``gap_tol``.

    ``method="monotonicity"`` (default) scores a cell T by
    min_f gap(f) / share_T(f), where share_T(f) is the fraction of the
    sigma2-energy of u2(f) carried by T. If T lies in E the lower bound of
    the inequality keeps this ratio away from zero for every f; a cell
    outside E is exposed by any f that loads T but produces a small gap.
    ``method="energy_share"`` scores max_f gap(f) * share_T(f) instead.

    A cell is detected when its score exceeds the ``quantile`` of all
    scores; with no gap above tolerance nothing is detected.
    """
    p = _check_p(p)
    dictionary.validate(mesh)
    values = oracle_table.values if isinstance(oracle_table, DNTable) else np.asarray(oracle_table, dtype=float)
    m = len(dictionary)
    if values.shape != (m, m) and values.shape != (m,):
        raise InvalidArgument(f"oracle table shape {values.shape} does not match {m} dictionary entries")
    lam1 = np.diag(values) if values.ndim == 2 else values
    if not 0.0 <= quantile < 1.0:
        raise InvalidArgument(f"quantile must lie in [0, 1), got {quantile}")
    if method not in ("monotonicity", "energy_share"):
        raise InvalidArgument(f"unknown detector method {method!r}")

    s2 = _sigma_array(mesh, sigma2)
    area = mesh.cell_areas
    gaps = np.zeros(m)
    shares = np.zeros((m, mesh.n_cells))
    sols = _map(lambda e: _solve_or_fail(mesh, s2, A, p, e[1], solver_kw)[0], list(dictionary), threads)
    for i, u2 in enumerate(sols):
        if u2 is None:
            continue
        ecell = s2 * cell_energy_density(mesh, A, p, u2) * area
        lam2 = float(ecell.sum())
        if lam2 <= 0.0 or not np.isfinite(lam1[i]):
            continue
        shares[i] = ecell / lam2
        g = (lam1[i] - lam2) / lam2
        gaps[i] = g if g > gap_tol else 0.0

    if not np.any(gaps > 0.0):
        scores = np.zeros(mesh.n_cells)
        return DifferenceRegionEstimate(scores, np.zeros(mesh.n_cells, dtype=bool), 0.0, gaps)

    usable = np.array([shares[i].sum() > 0 for i in range(m)])
    if method == "energy_share":
        scores = np.max(gaps[usable, None] * shares[usable], axis=0)
    else:
        with np.errstate(divide="ignore"):
            ratios = np.where(shares[usable] > 0.0, gaps[usable, None] / shares[usable], np.inf)
        scores = ratios.min(axis=0)
        # cells no entry reaches carry no evidence either way
        scores = np.where(np.isfinite(scores), scores, 0.0)
    threshold = float(np.quantile(scores, quantile))
    return DifferenceRegionEstimate(scores, scores > threshold, threshold, gaps)


def jaccard(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union
