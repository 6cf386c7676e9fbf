"""Triangular meshes and piecewise-linear differential operators.

Functions on a mesh are plain numpy arrays: nodal functions hold one value
per vertex, cell fields one value (or vector/matrix) per triangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix

from plaplab.errors import InvalidArgument, PreconditionViolation

__all__ = [
    "Mesh",
    "build_structured_mesh",
    "gradient",
    "integrate_cellwise",
    "interpolate",
    "read_mesh",
    "write_mesh",
    "read_field",
    "write_field",
]


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of a planar polygon.

    Attributes:
        vertices: (V, 2) coordinates.
        triangles: (T, 3) vertex indices, counterclockwise.
        boundary_vertex_flags: (V,) True for vertices on boundary edges.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray = field(default=None)

    def __post_init__(self):
        vertices = _frozen(self.vertices, float)
        triangles = _frozen(self.triangles, np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise InvalidArgument("vertices must have shape (V, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise InvalidArgument("triangles must have shape (T, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidArgument("triangle references a missing vertex")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

        signed = self._signed_areas()
        bad = np.flatnonzero(signed <= 0.0)
        if bad.size:
            raise PreconditionViolation(
                f"triangle {bad[0]} has non-positive signed area", cell=int(bad[0])
            )

        edges, counts = np.unique(self._sorted_edges().reshape(-1, 2), axis=0, return_counts=True)
        if np.any(counts > 2):
            raise PreconditionViolation("an edge is shared by more than two triangles")
        derived = np.zeros(len(vertices), dtype=bool)
        derived[edges[counts == 1].ravel()] = True
        if self.boundary_vertex_flags is None:
            flags = derived
        else:
            flags = np.asarray(self.boundary_vertex_flags, dtype=bool)
            if flags.shape != derived.shape or np.any(flags != derived):
                raise PreconditionViolation("boundary flags disagree with the boundary edges")
        object.__setattr__(self, "boundary_vertex_flags", _frozen(flags, bool))

    def _signed_areas(self) -> np.ndarray:
        P = self.vertices[self.triangles]
        d1 = P[:, 1] - P[:, 0]
        d2 = P[:, 2] - P[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def _sorted_edges(self) -> np.ndarray:
        t = self.triangles
        e = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        return np.sort(e, axis=2)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return _frozen(self._signed_areas(), float)

    @cached_property
    def centroids(self) -> np.ndarray:
        return _frozen(self.vertices[self.triangles].mean(axis=1), float)

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(T, 3, 2) gradients of the three hat functions on each cell."""
        P = self.vertices[self.triangles]
        two_area = 2.0 * self.cell_areas
        # grad(phi_k) = rot90(P_{k+2} - P_{k+1}) / (2 area)
        d = P[:, [2, 0, 1]] - P[:, [1, 2, 0]]
        G = np.stack([-d[..., 1], d[..., 0]], axis=-1) / two_area[:, None, None]
        return _frozen(G, float)

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return _frozen(np.flatnonzero(~self.boundary_vertex_flags), np.int64)

    @cached_property
    def cell_neighbors(self) -> np.ndarray:
        """(T, 3) index of the cell across the edge opposite each vertex, -1 on the boundary."""
        e = self._sorted_edges().reshape(-1, 2)
        key = e[:, 0] * self.n_vertices + e[:, 1]
        order = np.argsort(key, kind="stable")
        ks = key[order]
        nbr = np.full(len(key), -1, dtype=np.int64)
        same = np.flatnonzero(ks[1:] == ks[:-1])
        a, b = order[same], order[same + 1]
        nbr[a] = b // 3
        nbr[b] = a // 3
        return _frozen(nbr.reshape(-1, 3), np.int64)

    @cached_property
    def _edge_data(self):
        e = self._sorted_edges().reshape(-1, 2)
        edges, inverse = np.unique(e, axis=0, return_inverse=True)
        return _frozen(edges, np.int64), _frozen(inverse.reshape(-1, 3), np.int64)

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) sorted vertex pairs of all edges."""
        return self._edge_data[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """(T, 3) index into ``edges`` of the edge opposite each local vertex."""
        return self._edge_data[1]

    def cell_graph(self, mask=None):
        """Sparse edge-adjacency graph of the cells, optionally restricted to ``mask``."""
        T = self.n_cells
        rows = np.repeat(np.arange(T), 3)
        cols = self.cell_neighbors.ravel()
        keep = cols >= 0
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            keep &= mask[rows] & mask[np.maximum(cols, 0)]
        return coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(T, T))

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return _frozen(self.vertices[self.edges].mean(axis=1), float)

    @cached_property
    def total_area(self) -> float:
        return float(np.sum(self.cell_areas))


def build_structured_mesh(rect=((0.0, 1.0), (0.0, 1.0)), n: int = 8) -> Mesh:
    """Split an n x n grid on an axis-aligned rectangle into 2n^2 triangles.

    ``rect`` is ``((x0, x1), (y0, y1))``. Every grid square is cut along its
    lower-left to upper-right diagonal.
    """
    if int(n) != n or n < 1:
        raise InvalidArgument(f"n must be a positive integer, got {n!r}")
    n = int(n)
    (x0, x1), (y0, y1) = rect
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise InvalidArgument(f"degenerate rectangle {rect!r}")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.divmod(np.arange(n * n), n)
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    flags = (
        (X.ravel() == x0) | (X.ravel() == x1) | (Y.ravel() == y0) | (Y.ravel() == y1)
    )
    return Mesh(vertices, triangles, flags)


def _check_nodal(mesh: Mesh, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise InvalidArgument(
            f"nodal function has shape {u.shape}, mesh has {mesh.n_vertices} vertices"
        )
    return u


def gradient(mesh: Mesh, u) -> np.ndarray:
    """Cellwise-constant gradient (T, 2) of the linear interpolant of ``u``."""
    u = _check_nodal(mesh, u)
    return np.einsum("tk,tkd->td", u[mesh.triangles], mesh.shape_gradients)


def integrate_cellwise(mesh: Mesh, c) -> float:
    c = np.asarray(c, dtype=float)
    if c.shape != (mesh.n_cells,):
        raise InvalidArgument(f"expected {mesh.n_cells} cell values, got shape {c.shape}")
    return float(np.dot(c, mesh.cell_areas))


def interpolate(mesh: Mesh, func) -> np.ndarray:
    """Nodal values of ``func(x1, x2)`` (vectorised over vertex arrays)."""
    x1, x2 = mesh.vertices[:, 0], mesh.vertices[:, 1]
    return np.broadcast_to(np.asarray(func(x1, x2), dtype=float), (mesh.n_vertices,)).copy()


# -- text formats ------------------------------------------------------------


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["mesh 2d"]
    for (x, y), b in zip(mesh.vertices, mesh.boundary_vertex_flags):
        lines.append(f"v {float(x)!r} {float(y)!r} {int(b)}")
    for i, j, k in mesh.triangles:
        lines.append(f"t {i} {j} {k}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    vertices, flags, triangles = [], [], []
    text = Path(path).read_text().splitlines()
    if not text or text[0].split() != ["mesh", "2d"]:
        raise InvalidArgument(f"{path}: line 1: expected header 'mesh 2d'")
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v" and len(parts) == 4:
                vertices.append((float(parts[1]), float(parts[2])))
                flags.append(parts[3] == "1")
            elif parts[0] == "t" and len(parts) == 4:
                triangles.append(tuple(int(s) for s in parts[1:]))
            else:
                raise ValueError
        except ValueError:
            raise InvalidArgument(f"{path}: line {lineno}: cannot parse {line!r}") from None
    return Mesh(np.array(vertices), np.array(triangles).reshape(-1, 3), np.array(flags))


_FIELD_WIDTH = {"scalar": 1, "vector": 2, "matrix": 3}


def write_field(path, values, kind: str = "scalar", location: str = "cell") -> None:
    """Write a field file; matrix fields store (a11, a12, a22) per entity."""
    if kind not in _FIELD_WIDTH or location not in ("cell", "vertex"):
        raise InvalidArgument(f"unknown field kind/location {kind!r}/{location!r}")
    values = np.asarray(values, dtype=float)
    if kind == "matrix":
        values = np.column_stack([values[:, 0, 0], values[:, 0, 1], values[:, 1, 1]])
    values = values.reshape(len(values), -1)
    lines = [f"field {kind} {location}"]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path):
    """Return ``(values, kind, location)`` from a field file."""
    text = Path(path).read_text().splitlines()
    header = text[0].split() if text else []
    if len(header) != 3 or header[0] != "field" or header[1] not in _FIELD_WIDTH:
        raise InvalidArgument(f"{path}: line 1: bad field header")
    kind, location = header[1], header[2]
    width = _FIELD_WIDTH[kind]
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != width:
            raise InvalidArgument(f"{path}: line {lineno}: expected {width} numbers")
        rows.append([float(s) for s in parts])
    values = np.array(rows, dtype=float).reshape(-1, width)
    if kind == "scalar":
        values = values[:, 0]
    elif kind == "matrix":
        a11, a12, a22 = values.T
        values = np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], axis=1)
    return values, kind, location
