"""Uniform simplicial meshes in one and two dimensions, with a plain-text format."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial
from typing import Sequence

import numpy as np

BOUNDARY_TAGS = ("dirichlet_u", "neumann_theta")


class MeshError(ValueError):
    """Raised for degenerate mesh specifications or malformed mesh files."""


@dataclass(eq=False)
class Mesh:
    """Conforming P1 mesh.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    nodes : ndarray, shape (n_nodes, dim)
    elems : ndarray, shape (n_elems, dim + 1)
        Vertex indices of each simplex.
    facets : ndarray, shape (n_facets, dim)
        Boundary facets (points in 1D, segments in 2D).
    facet_tags : list of tuple of str
        Tags carried by each facet; every facet carries both the
        displacement-Dirichlet and the temperature-Neumann tag.
    """

    dim: int
    nodes: np.ndarray
    elems: np.ndarray
    facets: np.ndarray
    facet_tags: list = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dim)
        self.elems = np.asarray(self.elems, dtype=np.int64).reshape(-1, self.dim + 1)
        self.facets = np.asarray(self.facets, dtype=np.int64).reshape(-1, self.dim)
        if not self.facet_tags:
            self.facet_tags = [BOUNDARY_TAGS] * len(self.facets)
        if np.any(self.measures <= 0):
            raise MeshError("mesh has non-positive element measures")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]

    @cached_property
    def _affine(self):
        x0 = self.nodes[self.elems[:, 0]]
        jac = np.stack([self.nodes[self.elems[:, j + 1]] - x0 for j in range(self.dim)], axis=2)
        return jac

    @cached_property
    def measures(self) -> np.ndarray:
        """Element measures |e|."""
        det = np.linalg.det(self._affine)
        return np.abs(det) / factorial(self.dim)

    @cached_property
    def grads(self) -> np.ndarray:
        """Gradients of the barycentric basis, shape (n_elems, dim + 1, dim)."""
        inv = np.linalg.inv(self._affine)  # rows: d lambda_{j+1} / dx
        g = np.empty((self.n_elems, self.dim + 1, self.dim))
        g[:, 1:, :] = inv
        g[:, 0, :] = -inv.sum(axis=1)
        return g

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Row sums of the P1 mass matrix: sum over e containing i of |e| / (d+1)."""
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.elems, np.repeat(self.measures[:, None] / (self.dim + 1), self.dim + 1, axis=1))
        return m

    @cached_property
    def facet_measures(self) -> np.ndarray:
        if self.dim == 1:
            return np.ones(len(self.facets))
        p = self.nodes[self.facets]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def boundary_weights(self, tag: str = "neumann_theta") -> np.ndarray:
        """Lumped boundary mass: sum over tagged facets containing i of |f| / d."""
        w = np.zeros(self.n_nodes)
        sel = np.array([tag in t for t in self.facet_tags], dtype=bool)
        if sel.any():
            fac = self.facets[sel]
            np.add.at(w, fac, np.repeat(self.facet_measures[sel][:, None] / self.dim, self.dim, axis=1))
        return w

    def boundary_nodes(self, tag: str = "dirichlet_u") -> np.ndarray:
        sel = np.array([tag in t for t in self.facet_tags], dtype=bool)
        return np.unique(self.facets[sel]) if sel.any() else np.zeros(0, dtype=np.int64)

    @cached_property
    def volume(self) -> float:
        return float(self.measures.sum())

    def element_mean(self, nodal: np.ndarray) -> np.ndarray:
        """Element average of a nodal scalar field."""
        return np.asarray(nodal)[self.elems].mean(axis=1)

    def element_gradient(self, nodal: np.ndarray) -> np.ndarray:
        """Constant gradient of the P1 interpolant on every element, shape (n_elems, dim)."""
        return np.einsum("ej,ejd->ed", np.asarray(nodal)[self.elems], self.grads)

    def n_edges(self) -> int:
        if self.dim == 1:
            return self.n_elems
        e = np.sort(np.concatenate([self.elems[:, [0, 1]], self.elems[:, [1, 2]], self.elems[:, [0, 2]]]), axis=1)
        return len(np.unique(e, axis=0))

    def quadrature(self, n_points: int = 4):
        """Reference rule as (barycentric points (nq, d+1), weights summing to 1)."""
        return simplex_quadrature(self.dim, n_points)

    def interpolate_at(self, nodal: np.ndarray, bary: np.ndarray) -> np.ndarray:
        """Values of the P1 interpolant at barycentric points, shape (n_elems, nq)."""
        return np.asarray(nodal)[self.elems] @ bary.T


def simplex_quadrature(dim: int, n_points: int = 4):
    """Gauss rule on the reference simplex.

    In 1D this is Gauss-Legendre with ``n_points`` nodes (exact to degree
    2n-1); in 2D a collapsed (Duffy) tensor rule with ``n_points**2`` nodes,
    exact for polynomials of degree 2n-2.
    """
    x, w = np.polynomial.legendre.leggauss(n_points)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    if dim == 1:
        return np.column_stack([1.0 - x, x]), w
    # map the square (s, t) to the triangle (s, t (1 - s)); jacobian (1 - s)
    S, T = np.meshgrid(x, x, indexing="ij")
    WS, WT = np.meshgrid(w, w, indexing="ij")
    l1 = S.ravel()
    l2 = (T * (1.0 - S)).ravel()
    wt = (WS * WT * (1.0 - S)).ravel() * 2.0
    return np.column_stack([1.0 - l1 - l2, l1, l2]), wt


def build_mesh(extents: Sequence, resolution: Sequence[int] | int) -> Mesh:
    """Uniform mesh of an interval or rectangle.

    Parameters
    ----------
    extents : sequence of (lo, hi) pairs, one per axis
    resolution : number of nodes per axis (at least 2)

    Notes
    -----
    In 2D each grid cell is cut along its (lower-left, upper-right) diagonal, so
    all triangles are right-angled and the stiffness matrix is an M-matrix.
    """
    ext = [tuple(map(float, e)) for e in (extents if np.ndim(extents) == 2 else [extents])]
    dim = len(ext)
    res = [int(resolution)] * dim if np.isscalar(resolution) else [int(r) for r in resolution]
    if dim not in (1, 2) or len(res) != dim:
        raise MeshError("only 1D and 2D meshes with one resolution per axis are supported")
    if any(r < 2 for r in res):
        raise MeshError(f"resolution must be at least 2 nodes per axis, got {res}")
    if any(not hi > lo for lo, hi in ext):
        raise MeshError(f"degenerate extents {ext}")
    if dim == 1:
        (lo, hi), n = ext[0], res[0]
        x = np.linspace(lo, hi, n)
        elems = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        facets = np.array([[0], [n - 1]])
        return Mesh(1, x[:, None], elems, facets)
    (x0, x1), (y0, y1) = ext
    nx, ny = res
    xs, ys = np.linspace(x0, x1, nx), np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(nx * ny).reshape(ny, nx)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    elems = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    bottom = np.column_stack([idx[0, :-1], idx[0, 1:]])
    right = np.column_stack([idx[:-1, -1], idx[1:, -1]])
    top = np.column_stack([idx[-1, 1:], idx[-1, :-1]])
    left = np.column_stack([idx[1:, 0], idx[:-1, 0]])
    facets = np.concatenate([bottom, right, top, left])
    return Mesh(2, nodes, elems, facets)


def write_mesh(mesh: Mesh, path) -> None:
    """Write the mesh as ``MESH d n_nodes n_elems`` followed by nodes, elements, boundary."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mesh_to_text(mesh))


def mesh_to_text(mesh: Mesh) -> str:
    lines = [f"MESH {mesh.dim} {mesh.n_nodes} {mesh.n_elems}"]
    lines += [" ".join(f"{c:.17g}" for c in row) for row in mesh.nodes]
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.elems]
    lines.append(f"BOUNDARY {len(mesh.facets)}")
    for fac, tags in zip(mesh.facets, mesh.facet_tags):
        lines.append(" ".join(str(int(i)) for i in fac) + " " + ",".join(tags))
    return "\n".join(lines) + "\n"


def mesh_from_text(text: str) -> Mesh:
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    try:
        head = rows[0]
        if head[0] != "MESH":
            raise MeshError("missing MESH header")
        dim, nn, ne = int(head[1]), int(head[2]), int(head[3])
        nodes = np.array([[float(v) for v in r] for r in rows[1 : 1 + nn]])
        elems = np.array([[int(v) for v in r] for r in rows[1 + nn : 1 + nn + ne]])
        bhead = rows[1 + nn + ne]
        if bhead[0] != "BOUNDARY":
            raise MeshError("missing BOUNDARY section")
        nf = int(bhead[1])
        brows = rows[2 + nn + ne : 2 + nn + ne + nf]
        facets = np.array([[int(v) for v in r[:dim]] for r in brows]).reshape(-1, dim)
        tags = [tuple(r[dim].split(",")) for r in brows]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh text: {exc}") from exc
    for t in tags:
        unknown = set(t) - set(BOUNDARY_TAGS)
        if unknown:
            raise MeshError(f"unknown boundary tags {sorted(unknown)}")
    return Mesh(dim, nodes, elems, facets, tags)


def read_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        return mesh_from_text(fh.read())
