"""Software rasterization and multi-view projection of 2D masks onto mesh vertices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .geometry import TriangleMesh
from .kernels import get_backend
from .mesh_io import BinaryMask2D, CameraView

NEAR = 1e-6


@dataclass(frozen=True)
class DepthBuffer:
    """Per-pixel nearest camera depth and face id (-1 where empty)."""

    depth: np.ndarray
    face_id: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def covered(self) -> np.ndarray:
        return self.face_id >= 0


def project_vertex(cam: CameraView, p):
    """Pixel coordinates and depth ``(u, v, z)`` of a world point, or None if behind."""
    X, Y, Z = cam.to_camera(np.asarray(p, dtype=np.float64).reshape(3))
    if Z <= 0:
        return None
    return cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy, float(Z)


def project_points(cam: CameraView, points):
    """Vectorized projection: ``(u, v, z)`` arrays; u, v are nan where z <= 0."""
    xyz = cam.to_camera(points)
    z = xyz[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, cam.fx * xyz[:, 0] / z + cam.cx, np.nan)
        v = np.where(z > 0, cam.fy * xyz[:, 1] / z + cam.cy, np.nan)
    return u, v, z


def rasterize(mesh: TriangleMesh, cam: CameraView, backend: Optional[str] = None,
              near: float = NEAR) -> DepthBuffer:
    """Z-buffer ``mesh`` into ``cam``'s image with pixel-center sampling and
    a top-left fill rule. Triangles crossing the near plane are clipped."""
    xyz = np.ascontiguousarray(cam.to_camera(mesh.vertices))
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    depth, ids = get_backend(backend).rasterize(
        xyz, faces, cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy, near)
    return DepthBuffer(depth, ids)


@dataclass(frozen=True)
class ProjectionResult:
    mesh: TriangleMesh
    visible_views: np.ndarray
    wound_votes: np.ndarray
    theta: float
    bias: float

    @property
    def observed(self) -> np.ndarray:
        return self.visible_views > 0

    @property
    def unobserved(self) -> int:
        return int(np.count_nonzero(self.visible_views == 0))


def visible_vertices(mesh: TriangleMesh, cam: CameraView, buf: DepthBuffer, bias: float):
    """Visibility flags plus pixel (row, col) of every vertex for one view.

    A vertex is visible when it projects inside the image and is no deeper
    than the buffer at its pixel plus ``bias``; a pixel no face covers
    cannot occlude.
    """
    u, v, z = project_points(cam, mesh.vertices)
    ok = z > 0
    with np.errstate(invalid="ignore"):
        col = np.floor(np.where(ok, u, -1.0))
        row = np.floor(np.where(ok, v, -1.0))
    ok &= (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    col = np.where(ok, col, 0).astype(np.int64)
    row = np.where(ok, row, 0).astype(np.int64)
    d = buf.depth[row, col]
    vis = ok & ((buf.face_id[row, col] < 0) | (z <= d + bias))
    return vis, row, col


def project_masks(mesh: TriangleMesh, cams: Sequence[CameraView], masks: Sequence[BinaryMask2D],
                  theta: float = 0.5, bias: Optional[float] = None,
                  backend: Optional[str] = None) -> ProjectionResult:
    """Label mesh vertices by voting over the views that see them.

    A vertex becomes wound when it is seen at least once and the fraction of
    its visible views whose mask is set at its pixel reaches ``theta``.
    ``bias`` defaults to 1e-3 of the mesh bounding-box diagonal.
    """
    if len(cams) != len(masks):
        raise InputError(f"{len(cams)} cameras but {len(masks)} masks")
    if not 0 < theta <= 1:
        raise InputError("theta must lie in (0, 1]")
    if bias is None:
        bias = 1e-3 * mesh.bbox_diagonal()
    seen = np.zeros(mesh.n_vertices, dtype=np.int64)
    votes = np.zeros(mesh.n_vertices, dtype=np.int64)
    for cam, mask in zip(cams, masks):
        if (mask.width, mask.height) != (cam.width, cam.height):
            raise InputError(f"mask size {mask.width}x{mask.height} does not match camera {cam.name}")
        buf = rasterize(mesh, cam, backend)
        vis, row, col = visible_vertices(mesh, cam, buf, bias)
        seen += vis
        votes += vis & mask.pixels[row, col]
    with np.errstate(invalid="ignore", divide="ignore"):
        wound = (seen > 0) & (votes / np.maximum(seen, 1) >= theta)
    labels = wound.astype(np.uint8)
    return ProjectionResult(mesh.replace(labels=labels, colors=None), seen, votes, theta, float(bias))
