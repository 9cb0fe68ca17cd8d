"""Procedural wound fixtures with analytic ground truth.

A fixture is a tessellated body part (sphere ~ shoulder, closed cylinder ~
leg) with a carved, labeled wound, a ring of cameras looking at it, the
ground-truth masks those cameras see, and a "reconstruction": the same mesh
in an unknown similarity frame with optional vertex noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import InputError
from .geometry import (
    SimilarityTransform,
    SpatialIndex,
    TriangleMesh,
    rotation_from_axis_angle,
    vertex_normals,
)
from .mesh_io import BinaryMask2D, CameraView, save_cameras, save_mask, save_mesh, write_json
from .projection import rasterize

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------- body parts


def _icosahedron():
    p = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere(level: int, radius: float = 1.0) -> TriangleMesh:
    """Icosahedron subdivided ``level`` times, projected onto the sphere."""
    v, f = _icosahedron()
    for _ in range(level):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = inv + len(v)
        nf = len(f)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:nf], m[nf:2 * nf], m[2 * nf:]
        v = np.vstack([v, mid])
        f = np.concatenate([
            np.stack([a, ab, ca], axis=1), np.stack([b, bc, ab], axis=1),
            np.stack([c, ca, bc], axis=1), np.stack([ab, bc, ca], axis=1),
        ])
    return TriangleMesh(v * radius, f)


def closed_cylinder(level: int, radius: float, length: float) -> TriangleMesh:
    """Capped tube along z centered at the origin; 8*2**level segments around
    and along the axis, outward-facing triangles."""
    n = 8 * 2 ** level
    ang = 2 * np.pi * np.arange(n) / n
    zs = np.linspace(-length / 2, length / 2, n + 1)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    side = np.concatenate([np.column_stack([ring, np.full(n, z)]) for z in zs])
    bottom_c = len(side)
    top_c = bottom_c + 1
    verts = np.vstack([side, [[0, 0, -length / 2], [0, 0, length / 2]]])
    faces = []
    j = np.arange(n)
    jn = (j + 1) % n
    for i in range(n):
        lo, hi = i * n, (i + 1) * n
        faces.append(np.stack([lo + j, lo + jn, hi + jn], axis=1))
        faces.append(np.stack([lo + j, hi + jn, hi + j], axis=1))
    faces.append(np.stack([np.full(n, bottom_c), jn, j], axis=1))
    faces.append(np.stack([np.full(n, top_c), n * n + j, n * n + jn], axis=1))
    return TriangleMesh(verts, np.concatenate(faces))


def gen_body_part(shape: str, tessellation_level: int, size: float = 50.0,
                  length: Optional[float] = None) -> TriangleMesh:
    """Watertight stand-in body part. ``size`` is the radius in mm; the
    cylinder's length defaults to four radii."""
    if tessellation_level < 1:
        raise InputError("tessellation_level must be >= 1")
    if shape == "sphere":
        return icosphere(tessellation_level, size)
    if shape == "cylinder":
        return closed_cylinder(tessellation_level, size, length if length is not None else 4 * size)
    raise InputError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------- wound


@dataclass(frozen=True)
class WoundSpec:
    center: tuple
    radius: float
    depth: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError("wound radius must be positive")
        if self.depth < 0:
            raise InputError("wound depth must be >= 0")

    def to_dict(self) -> dict:
        return {"center": [float(x) for x in self.center], "radius": self.radius, "depth": self.depth}


def bump_profile(r, radius: float, depth: float):
    """Inward displacement d(r) = depth * (1 - (r/R)^2)^2 for r < R, else 0."""
    r = np.asarray(r, dtype=np.float64)
    x = 1.0 - (r / radius) ** 2
    return np.where(r < radius, depth * x * x, 0.0)


def carve_wound(mesh: TriangleMesh, spec: WoundSpec) -> TriangleMesh:
    """Push vertices within Euclidean distance R of the center inward along
    their normals and label them wound; everything else stays background."""
    c = np.asarray(spec.center, dtype=np.float64)
    gap = float(SpatialIndex(mesh).query(c).distances[0])
    if gap > 2 * spec.radius:
        raise InputError(f"wound center is {gap:.3g} mm from the surface (> 2R)")
    r = np.linalg.norm(mesh.vertices - c, axis=1)
    inside = r < spec.radius
    if not inside.any():
        raise InputError("wound region empty — refine tessellation")
    normals = vertex_normals(mesh)
    v = mesh.vertices.copy()
    v[inside] -= bump_profile(r[inside], spec.radius, spec.depth)[:, None] * normals[inside]
    return TriangleMesh(v, mesh.faces, inside.astype(np.uint8))


# ---------------------------------------------------------------- cameras


def _basis(axis):
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ a) * a
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(a, e1), a


def look_at(center, target, up) -> np.ndarray:
    """World-to-camera rotation with +z toward ``target`` and image-down
    roughly opposite ``up``."""
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, _basis(up)[0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def gen_camera_ring(target, k: int, ring_radius: float, elevation: float, width: int, height: int,
                    fov_deg: float, axis=(0.0, 0.0, 1.0)) -> list[CameraView]:
    """``k`` cameras at distance ``ring_radius`` from ``target``, evenly spaced
    in azimuth about ``axis`` and raised ``elevation`` degrees above the plane
    normal to it. Each camera's optical axis passes through the target."""
    if k < 1:
        raise InputError("need at least one camera")
    target = np.asarray(target, dtype=np.float64)
    e1, e2, up = _basis(axis)
    el = np.deg2rad(elevation)
    f = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    cams = []
    for i in range(k):
        az = 2 * np.pi * i / k
        d = np.cos(el) * (np.cos(az) * e1 + np.sin(az) * e2) + np.sin(el) * up
        center = target + ring_radius * d
        R = look_at(center, target, up)
        cams.append(CameraView(
            name=f"view_{i:03d}", width=width, height=height, fx=f, fy=f,
            cx=width / 2.0, cy=height / 2.0, rotation=R, translation=-R @ center,
        ))
    return cams


def transform_cameras(cams: Sequence[CameraView], t: SimilarityTransform) -> list[CameraView]:
    """Express cameras in the frame reached by applying ``t`` to the world.

    Images are unchanged: a point ``x`` seen by the original camera lands on
    the same pixel as ``t(x)`` seen by the transformed one.
    """
    out = []
    for c in cams:
        R = c.rotation @ t.rotation.T
        center = t.apply(c.center)
        out.append(CameraView(c.name, c.width, c.height, c.fx, c.fy, c.cx, c.cy, R, -R @ center))
    return out


# ---------------------------------------------------------------- masks and noise


def render_gt_masks(mesh: TriangleMesh, cams: Sequence[CameraView],
                    backend: Optional[str] = None) -> list[BinaryMask2D]:
    """A pixel is wound when its front-most face has at least two wound vertices."""
    if mesh.labels is None:
        raise InputError("mesh has no labels")
    wound_face = mesh.labels[mesh.faces].astype(np.int64).sum(axis=1) >= 2
    masks = []
    for cam in cams:
        buf = rasterize(mesh, cam, backend)
        ids = buf.face_id
        masks.append(BinaryMask2D((ids >= 0) & wound_face[np.maximum(ids, 0)]))
    return masks


def perturb(mesh: TriangleMesh, t: SimilarityTransform, sigma: float, seed: int) -> TriangleMesh:
    """Apply ``t`` then add i.i.d. Gaussian noise per coordinate; labels and
    colors are dropped.

    ``sigma`` is in ground-truth millimetres, so in the transformed frame the
    noise standard deviation is ``sigma * t.scale``.
    """
    if sigma < 0:
        raise InputError("sigma must be >= 0")
    v = t.apply(mesh.vertices)
    if sigma > 0:
        v = v + np.random.default_rng(seed).normal(0.0, sigma * t.scale, size=v.shape)
    return TriangleMesh(v, mesh.faces)


# ---------------------------------------------------------------- bundles


@dataclass
class FixtureBundle:
    gt_mesh: TriangleMesh
    cams: list
    masks: list
    est_mesh: TriangleMesh
    est_cams: list
    true_transform: SimilarityTransform
    seed: int
    params: dict = field(default_factory=dict)

    def write(self, out_dir) -> Path:
        """Write the bundle in the standard directory layout."""
        out = Path(out_dir)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        save_mesh(self.gt_mesh, out / "gt_mesh.ply")
        save_mesh(self.est_mesh, out / "est_mesh.ply")
        save_cameras(self.cams, out / "cameras_gt.json")
        save_cameras(self.est_cams, out / "cameras_est.json")
        for i, m in enumerate(self.masks):
            save_mask(m, out / "masks" / f"view_{i:03d}.pgm")
        meta = dict(self.params)
        meta.update({
            "tool_version": __version__,
            "seed": self.seed,
            "true_transform": self.true_transform.to_dict(),
            "gt_vertices": self.gt_mesh.n_vertices,
            "gt_faces": self.gt_mesh.n_faces,
            "gt_wound_vertices": int(np.count_nonzero(self.gt_mesh.labels)),
        })
        write_json(meta, out / "fixture.json")
        return out


def default_wound(shape: str, size: float) -> WoundSpec:
    center = (0.0, 0.0, size) if shape == "sphere" else (size, 0.0, 0.0)
    return WoundSpec(center, radius=15.0, depth=5.0)


def outward_axis(shape: str, point) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    if shape == "cylinder":
        p = np.array([p[0], p[1], 0.0])
    n = np.linalg.norm(p)
    return p / n if n > 0 else np.array([0.0, 0.0, 1.0])


def make_fixture(shape: str = "sphere", tessellation_level: int = 4, spec: Optional[WoundSpec] = None,
                 k_views: int = 12, resolution: int = 512,
                 t: Optional[SimilarityTransform] = None, sigma: float = 0.0, seed: int = 0,
                 size: float = 50.0, ring_radius: Optional[float] = None, elevation: float = 60.0,
                 fov_deg: float = 40.0, out_dir=None, backend: Optional[str] = None) -> FixtureBundle:
    """Generate a complete fixture; deterministic in its arguments.

    The camera ring circles the wound center about the outward surface
    direction, at ``ring_radius`` (default three body radii).
    """
    spec = spec or default_wound(shape, size)
    t = t or SimilarityTransform.identity()
    ring_radius = 3.0 * size if ring_radius is None else ring_radius
    gt = carve_wound(gen_body_part(shape, tessellation_level, size), spec)
    cams = gen_camera_ring(spec.center, k_views, ring_radius, elevation, resolution, resolution,
                           fov_deg, axis=outward_axis(shape, spec.center))
    masks = render_gt_masks(gt, cams, backend)
    est = perturb(gt, t, sigma, seed)
    params = {
        "shape": shape, "tessellation_level": tessellation_level, "size": size,
        "wound": spec.to_dict(), "k_views": k_views, "resolution": resolution,
        "ring_radius": ring_radius, "elevation": elevation, "fov_deg": fov_deg, "sigma": sigma,
    }
    bundle = FixtureBundle(gt, cams, masks, est, transform_cameras(cams, t), t, seed, params)
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle
