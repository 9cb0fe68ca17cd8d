"""Core geometric types and queries.

All coordinates are millimetres. Meshes and transforms are immutable: their
arrays are flagged read-only and every operation returns a new object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .errors import InputError
from .kernels import get_backend

logger = logging.getLogger(__name__)

BACKGROUND = 0
WOUND = 1


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface with optional per-vertex labels and colors.

    Faces that repeat a vertex index or have zero area are dropped at
    construction; ``dropped_faces`` records how many.
    """

    vertices: np.ndarray
    faces: np.ndarray
    labels: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    dropped_faces: int = field(default=0, init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InputError("malformed face: vertex index out of range")
        if len(f):
            distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
            cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            good = distinct & (np.einsum("ij,ij->i", cr, cr) > 0.0)
            dropped = int((~good).sum())
            if dropped:
                logger.warning("dropped %d degenerate face(s)", dropped)
                f = f[good]
            object.__setattr__(self, "dropped_faces", dropped)
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.uint8).reshape(-1)
            if len(lab) != len(v):
                raise InputError(f"labels length {len(lab)} != vertex count {len(v)}")
            object.__setattr__(self, "labels", _frozen(lab))
        if self.colors is not None:
            col = np.array(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(col) != len(v):
                raise InputError(f"colors length {len(col)} != vertex count {len(v)}")
            object.__setattr__(self, "colors", _frozen(col))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def replace(self, **changes) -> "TriangleMesh":
        kw = dict(vertices=self.vertices, faces=self.faces, labels=self.labels, colors=self.colors)
        kw.update(changes)
        return TriangleMesh(**kw)

    @cached_property
    def triangles(self) -> np.ndarray:
        """(F, 9) contiguous array of corner coordinates a, b, c per face."""
        return _frozen(np.ascontiguousarray(self.vertices[self.faces].reshape(-1, 9)))

    @cached_property
    def _cross(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _frozen(0.5 * np.linalg.norm(self._cross, axis=1))

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = self._cross
        return _frozen(c / np.linalg.norm(c, axis=1, keepdims=True))

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return _frozen(np.unique(np.sort(e, axis=1), axis=0))

    def boundary_vertices(self) -> np.ndarray:
        """Boolean mask of vertices on an edge used by only one face."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        uniq, count = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        out = np.zeros(self.n_vertices, dtype=bool)
        out[uniq[count == 1].ravel()] = True
        return out

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def bbox_diagonal(self) -> float:
        if not self.n_vertices:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def wound_mask(self) -> np.ndarray:
        if self.labels is None:
            raise InputError("mesh has no labels")
        return self.labels == WOUND


def _check_rotation(r: np.ndarray, tol: float) -> bool:
    return bool(np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0) and abs(np.linalg.det(r) - 1.0) <= tol)


def rotation_from_axis_angle(axis, degrees: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``degrees``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    th = np.deg2rad(degrees)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        s = float(self.scale)
        if not s > 0:
            raise InputError(f"scale must be positive, got {s}")
        if not _check_rotation(r, 1e-9):
            raise InputError("invalid rotation")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rotation.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(d["scale"], np.reshape(d["rotation"], (3, 3)), d["translation"])


def compose(outer: SimilarityTransform, inner: SimilarityTransform) -> SimilarityTransform:
    """Transform applying ``inner`` first, then ``outer``."""
    return SimilarityTransform(
        outer.scale * inner.scale,
        outer.rotation @ inner.rotation,
        outer.scale * (outer.rotation @ inner.translation) + outer.translation,
    )


def apply_transform(t: SimilarityTransform, mesh: TriangleMesh) -> TriangleMesh:
    return mesh.replace(vertices=t.apply(mesh.vertices))


class SurfaceSamples(NamedTuple):
    """Batch of surface samples: points (n,3), unit normals (n,3), source faces (n,)."""

    points: np.ndarray
    normals: np.ndarray
    faces: np.ndarray


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> SurfaceSamples:
    """Draw ``n`` area-uniform points on the surface.

    Faces are picked with probability proportional to area, then a point is
    placed uniformly inside the face by folded barycentric coordinates. The
    result depends only on (mesh, n, seed).
    """
    if mesh.n_faces == 0:
        raise InputError("empty mesh")
    if n < 1:
        raise InputError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(mesh.face_areas)
    pick = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    pick = np.minimum(pick, mesh.n_faces - 1)
    u = rng.random(n)
    v = rng.random(n)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    # corners in index order, so a face's samples do not depend on its winding
    corner = mesh.vertices[np.sort(mesh.faces[pick], axis=1)]
    a, b, c = corner[:, 0], corner[:, 1], corner[:, 2]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return SurfaceSamples(pts, mesh.face_normals[pick], pick)


def vertex_normals(mesh: TriangleMesh, return_isolated: bool = False):
    """Area-weighted vertex normals.

    Vertices without an incident face get a zero normal; pass
    ``return_isolated=True`` to also receive their boolean mask.
    """
    if mesh.n_vertices == 0:
        raise InputError("empty mesh")
    acc = np.zeros((mesh.n_vertices, 3))
    # the raw cross product is face normal * 2 * area
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], mesh._cross)
    norm = np.linalg.norm(acc, axis=1)
    isolated = norm == 0.0
    out = np.zeros_like(acc)
    out[~isolated] = acc[~isolated] / norm[~isolated, None]
    if isolated.any():
        logger.warning("%d isolated vertex(es) have zero normals", int(isolated.sum()))
    if return_isolated:
        return out, isolated
    return out


class NearestResult(NamedTuple):
    points: np.ndarray
    distances: np.ndarray
    faces: np.ndarray
    normals: np.ndarray


# barycentric coordinates below this count as zero when deciding whether a
# closest point sits on an edge or a vertex
_FEATURE_TOL = 1e-9


class SpatialIndex:
    """Exact closest-point-on-surface queries over a mesh's triangles.

    When the closest point lies on an edge or vertex, every face sharing that
    feature is equally near. The reported face is then the lowest-index face
    containing the feature, so the choice does not hinge on rounding (which
    would make normal-based metrics jitter under rigid motion). Distances
    within a few ulps of zero are reported as exactly zero.
    """

    def __init__(self, mesh: TriangleMesh, backend: str | None = None):
        if mesh.n_faces == 0:
            raise InputError("empty mesh")
        self.mesh = mesh
        self.backend = get_backend(backend)
        self._locator = self.backend.TriangleLocator(mesh.triangles.copy())
        extent = float(np.abs(mesh.vertices[np.unique(mesh.faces)]).max())
        self._zero = 64 * np.finfo(np.float64).eps * extent
        self._features = None

    def _feature_tables(self):
        if self._features is None:
            F = self.mesh.faces
            nf = len(F)
            fid = np.arange(nf)
            vmin = np.full(self.mesh.n_vertices, nf, dtype=np.int64)
            np.minimum.at(vmin, F.ravel(), np.repeat(fid, 3))
            # local edge k is the one opposite corner k
            e = np.sort(np.stack([F[:, [1, 2]], F[:, [2, 0]], F[:, [0, 1]]], axis=1), axis=2)
            _, inv = np.unique(e.reshape(-1, 2), axis=0, return_inverse=True)
            inv = inv.ravel()
            emin = np.full(inv.max() + 1, nf, dtype=np.int64)
            np.minimum.at(emin, inv, np.repeat(fid, 3))
            self._features = (vmin, emin[inv].reshape(nf, 3))
        return self._features

    def _canonical_faces(self, pts: np.ndarray, face: np.ndarray) -> np.ndarray:
        tri = self.mesh.triangles[face]
        a = tri[:, 0:3]
        e0, e1, r = tri[:, 3:6] - a, tri[:, 6:9] - a, pts - a
        d00 = np.einsum("ij,ij->i", e0, e0)
        d01 = np.einsum("ij,ij->i", e0, e1)
        d11 = np.einsum("ij,ij->i", e1, e1)
        d20 = np.einsum("ij,ij->i", r, e0)
        d21 = np.einsum("ij,ij->i", r, e1)
        den = d00 * d11 - d01 * d01
        v = (d11 * d20 - d01 * d21) / den
        w = (d00 * d21 - d01 * d20) / den
        bary = np.column_stack([1.0 - v - w, v, w])
        zero = bary < _FEATURE_TOL
        nz = zero.sum(axis=1)
        if not nz.any():
            return face
        vmin, edge_min = self._feature_tables()
        out = face.copy()
        on_edge = np.flatnonzero(nz == 1)
        out[on_edge] = edge_min[face[on_edge], np.argmax(zero[on_edge], axis=1)]
        on_vert = np.flatnonzero(nz >= 2)
        corner = np.argmax(bary[on_vert], axis=1)
        out[on_vert] = vmin[self.mesh.faces[face[on_vert], corner]]
        return out

    def query(self, points) -> NearestResult:
        q = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        pts, dist, face = self._locator.query(q)
        dist = np.where(dist <= self._zero, 0.0, dist)
        face = self._canonical_faces(pts, face)
        return NearestResult(pts, dist, face, self.mesh.face_normals[face])


def nearest_on_surface(index: SpatialIndex, q):
    """Single-point query returning ``(point, distance, face, normal)``."""
    r = index.query(q)
    return r.points[0], float(r.distances[0]), int(r.faces[0]), r.normals[0]
