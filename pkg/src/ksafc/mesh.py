"""Conforming triangulations of the unit square and the patch geometry used by
assembly and the flux limiter."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .sparsela import transpose_slots


class MeshError(ValueError):
    pass


class RightAngleWarning(UserWarning):
    """Mesh has exact right angles: nonobtuse but not strictly acute."""


@dataclass(eq=False)
class Mesh:
    """P1 triangulation.

    ``nodes`` is (N, 2), ``triangles`` is (K, 3) with counterclockwise node
    indices, ``edges`` is (E, 2) with ``edges[:, 0] < edges[:, 1]``.
    ``resolution`` is set only for meshes built by
    :func:`build_uniform_unit_square`.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    node_triangles: tuple
    neighbors: tuple
    boundary: np.ndarray
    resolution: int | None = None

    @classmethod
    def from_triangles(cls, nodes, triangles, resolution=None) -> "Mesh":
        nodes = np.ascontiguousarray(nodes, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must have shape (N, 2), got {nodes.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError(f"triangles must have shape (K, 3), got {triangles.shape}")
        n = len(nodes)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
            raise MeshError("triangle references a node that does not exist")

        area = signed_areas(nodes, triangles)
        if np.any(area <= 0.0):
            bad = int(np.flatnonzero(area <= 0.0)[0])
            raise MeshError(f"triangle {bad} has nonpositive signed area {area[bad]:.3e}")

        local = np.array([[0, 1], [1, 2], [2, 0]])
        pairs = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
        edges, counts = np.unique(pairs, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("nonconforming mesh: an edge is shared by more than two triangles")

        boundary = np.zeros(n, dtype=bool)
        boundary[edges[counts == 1].ravel()] = True

        nbr_lists = [[] for _ in range(n)]
        for a, b in edges:
            nbr_lists[a].append(b)
            nbr_lists[b].append(a)
        tri_lists = [[] for _ in range(n)]
        for t, tri in enumerate(triangles):
            for v in tri:
                tri_lists[v].append(t)

        return cls(
            nodes=nodes,
            triangles=triangles,
            edges=edges,
            node_triangles=tuple(np.array(t, dtype=np.int64) for t in tri_lists),
            neighbors=tuple(np.array(sorted(v), dtype=np.int64) for v in nbr_lists),
            boundary=boundary,
            resolution=resolution,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three local basis functions, shape (K, 3, 2)."""
        p = self.nodes[self.triangles]
        # grad phi_a is the inward edge normal of the opposite edge over 2|K|
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        rot = np.stack([np.stack([-e[:, 1], e[:, 0]], axis=1) for e in (e0, e1, e2)], axis=1)
        return rot / (2.0 * self.areas)[:, None, None]

    @cached_property
    def graph(self) -> "NodeGraph":
        return NodeGraph.from_mesh(self)


@dataclass(eq=False)
class NodeGraph:
    """CSR layout of the node adjacency graph including the diagonal.

    Every nodal operator shares this pattern, so per-slot arrays
    (``rows``, ``transpose``) and the triangle scatter map ``slots``
    are computed once per mesh.
    """

    indptr: np.ndarray
    indices: np.ndarray
    rows: np.ndarray
    transpose: np.ndarray
    diagonal: np.ndarray
    slots: np.ndarray  # (K, 3, 3) data index of local entry (a, b)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def offdiag(self) -> np.ndarray:
        return self.rows != self.indices

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "NodeGraph":
        n = mesh.n_nodes
        counts = np.array([len(nb) + 1 for nb in mesh.neighbors], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        indices = np.concatenate(
            [np.sort(np.append(nb, i)) for i, nb in enumerate(mesh.neighbors)]
        ) if n else np.zeros(0, dtype=np.int64)
        rows = np.repeat(np.arange(n), counts)
        transpose = transpose_slots(indptr, indices)
        diagonal = _find_slots(indptr, indices, np.arange(n), np.arange(n))
        tri = mesh.triangles
        slots = _find_slots(
            indptr, indices,
            np.repeat(tri, 3, axis=1).ravel(),
            np.tile(tri, (1, 3)).ravel(),
        ).reshape(-1, 3, 3)
        return cls(indptr, indices, rows, transpose, diagonal, slots)


def _find_slots(indptr, indices, i, j):
    n = len(indptr) - 1
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    keys = rows * n + indices
    want = np.asarray(i, dtype=np.int64) * n + np.asarray(j, dtype=np.int64)
    pos = np.searchsorted(keys, want)
    pos_c = np.minimum(pos, len(keys) - 1)
    missing = (pos >= len(keys)) | (keys[pos_c] != want)
    if np.any(missing):
        k = np.flatnonzero(np.ravel(missing))[0]
        raise MeshError(
            f"entry ({np.ravel(i)[k]}, {np.ravel(j)[k]}) is not in the adjacency pattern"
        )
    return pos


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_uniform_unit_square(M: int) -> Mesh:
    """(M+1)^2 grid on [0,1]^2, each cell cut by its lower-left to upper-right diagonal."""
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise MeshError(f"resolution M must be a positive integer, got {M!r}")
    M = int(M)
    t = np.arange(M + 1) / M
    x, y = np.meshgrid(t, t)
    nodes = np.column_stack([x.ravel(), y.ravel()])

    i, j = np.meshgrid(np.arange(M), np.arange(M))
    ll = (j * (M + 1) + i).ravel()
    lr = ll + 1
    ul = ll + M + 1
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.empty((2 * M * M, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return Mesh.from_triangles(nodes, triangles, resolution=M)


@dataclass
class MeshQuality:
    h_max: float
    h_min: float
    quasiuniformity_ratio: float
    max_interior_angle: float
    gamma: np.ndarray

    @property
    def nonobtuse(self) -> bool:
        return self.max_interior_angle <= math.pi / 2 + 1e-12


def interior_angles(mesh: Mesh) -> np.ndarray:
    """Angles (K, 3), angle a sits at local vertex a."""
    p = mesh.nodes[mesh.triangles]
    out = np.empty((mesh.n_triangles, 3))
    for a in range(3):
        u = p[:, (a + 1) % 3] - p[:, a]
        v = p[:, (a + 2) % 3] - p[:, a]
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        dot = np.einsum("ij,ij->i", u, v)
        out[:, a] = np.arctan2(np.abs(cross), dot)
    return out


def diameters(mesh: Mesh) -> np.ndarray:
    p = mesh.nodes[mesh.triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return lengths.max(axis=1)


def quality(mesh: Mesh) -> MeshQuality:
    h = diameters(mesh)
    return MeshQuality(
        h_max=float(h.max()),
        h_min=float(h.min()),
        quasiuniformity_ratio=float(h.max() / h.min()),
        max_interior_angle=float(interior_angles(mesh).max()),
        gamma=np.array([gamma_i(mesh, i) for i in range(mesh.n_nodes)]),
    )


def check_nonobtuse(mesh: Mesh, tol: float = 1e-12) -> bool:
    """True when every angle is at most pi/2; warns if some angle equals pi/2."""
    angles = interior_angles(mesh)
    worst = angles.max()
    if worst > math.pi / 2 + tol:
        return False
    if np.any(np.abs(angles - math.pi / 2) <= tol):
        warnings.warn(
            "mesh has right angles; s_ij <= 0 still holds but the mesh is not strictly acute",
            RightAngleWarning,
            stacklevel=2,
        )
    return True


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone chain, counterclockwise, collinear points dropped."""
    order = np.lexsort((points[:, 1], points[:, 0]))
    pts = points[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _segment_distance(z, a, b) -> float:
    ab = b - a
    s = np.clip(np.dot(z - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(z - (a + s * ab)))


def gamma_i(mesh: Mesh, i: int, rtol: float = 1e-10) -> float:
    """Linearity-preservation constant of node ``i``.

    Returns 1 for patches that are point-symmetric about the node. Otherwise
    the ratio of the largest node-to-patch-vertex distance to the distance
    from the node to the facets of the patch's convex hull. Hull facets that
    pass through the node (boundary nodes) are skipped.
    """
    if len(mesh.node_triangles[i]) == 0:
        raise MeshError(f"node {i} belongs to no triangle")
    z = mesh.nodes[i]
    nbr = mesh.nodes[mesh.neighbors[i]]
    offsets = nbr - z
    reach = float(np.linalg.norm(offsets, axis=1).max())
    tol = rtol * reach

    mirrored = -offsets
    gap = np.linalg.norm(mirrored[:, None, :] - offsets[None, :, :], axis=2).min(axis=1)
    if np.all(gap <= tol):
        return 1.0

    hull = _convex_hull(np.vstack([z, nbr]))
    dist = []
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        d = _segment_distance(z, a, b)
        if d > tol:
            dist.append(d)
    if not dist:
        raise MeshError(f"degenerate patch at node {i}")
    return reach / min(dist)


def write_mesh(mesh: Mesh, nodes_path, triangles_path) -> None:
    """Plain-text dump: ``x y`` per node line, ``i j k`` (0-based) per triangle line."""
    nodes_path, triangles_path = Path(nodes_path), Path(triangles_path)
    try:
        np.savetxt(nodes_path, mesh.nodes, fmt="%.17g")
        np.savetxt(triangles_path, mesh.triangles, fmt="%d")
    except OSError as exc:
        raise OSError(f"cannot write mesh dump to {nodes_path} / {triangles_path}: {exc}") from exc


def read_mesh(nodes_path, triangles_path) -> Mesh:
    nodes = np.loadtxt(nodes_path, ndmin=2)
    triangles = np.loadtxt(triangles_path, dtype=np.int64, ndmin=2)
    return Mesh.from_triangles(nodes, triangles)
