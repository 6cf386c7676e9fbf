"""Vectorised numpy element kernels (the fallback when the C extension is absent).

All kernels act on the regularised cell density

    W(g) = sigma * (eps^2 + A g . g)^(p/2)

for the cellwise-constant gradient g of a P1 nodal function.
"""

from __future__ import annotations

import numpy as np


def cell_gradients(G, tri, u):
    return np.einsum("tk,tkd->td", u[tri], G)


def energy(G, area, tri, u, sigma, A, p, eps):
    g = cell_gradients(G, tri, u)
    s = eps * eps + np.einsum("ti,tij,tj->t", g, A, g)
    return float(np.dot(sigma * np.maximum(s, 0.0) ** (0.5 * p), area))


def _flux_factor(s, p):
    # s^(p/2 - 1), with the continuous extension 0 at s = 0 for p > 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = s ** (0.5 * p - 1.0)
    return np.where(s > 0.0, f, 1.0 if p == 2.0 else 0.0)


def energy_and_residual(G, area, tri, u, sigma, A, p, eps):
    """Energy and per-cell local residuals (T, 3) of d(energy)/du."""
    g = cell_gradients(G, tri, u)
    Ag = np.einsum("tij,tj->ti", A, g)
    s = eps * eps + np.einsum("ti,ti->t", g, Ag)
    e = float(np.dot(sigma * np.maximum(s, 0.0) ** (0.5 * p), area))
    w = sigma * p * _flux_factor(s, p) * area
    flux = w[:, None] * Ag
    return e, np.einsum("td,tkd->tk", flux, G)


def local_hessians(G, area, tri, u, sigma, A, p, eps):
    """Per-cell 3x3 blocks of the energy Hessian with respect to nodal values."""
    g = cell_gradients(G, tri, u)
    Ag = np.einsum("tij,tj->ti", A, g)
    s = eps * eps + np.einsum("ti,ti->t", g, Ag)
    c1 = sigma * p * _flux_factor(s, p) * area
    with np.errstate(divide="ignore", invalid="ignore"):
        c2 = sigma * p * (p - 2.0) * s ** (0.5 * p - 2.0) * area
    c2 = np.where(s > 0.0, c2, 0.0)
    Hg = c1[:, None, None] * A + c2[:, None, None] * Ag[:, :, None] * Ag[:, None, :]
    return np.einsum("tkd,tde,tle->tkl", G, Hg, G)
