"""Registration of a reconstructed mesh onto the ground-truth frame.

The pipeline runs in three steps:

1. a similarity fit between matched camera centers,
2. rigid point-to-point ICP restricted to the wound region,
3. cropping the wound region out of both aligned meshes for scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, NumericalError
from .geometry import (
    SimilarityTransform,
    SpatialIndex,
    TriangleMesh,
    apply_transform,
    compose,
    sample_surface,
)
from .mesh_io import CameraView

logger = logging.getLogger(__name__)


def procrustes_umeyama(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity (or rigid) transform mapping ``src`` onto ``dst``.

    Closed form from the SVD of the centered cross-covariance, with the sign
    of the last singular direction flipped when needed so that det(R) = +1.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst):
        raise InputError("src and dst must have equal length")
    if len(src) < 3:
        raise InputError("insufficient correspondences")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = float(np.einsum("ij,ij->", xs, xs)) / len(src)
    sv = np.linalg.svd(xs, compute_uv=False)
    if var_s == 0.0 or sv[1] <= 1e-12 * sv[0]:
        raise NumericalError("degenerate configuration")
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    scale = float(D @ S) / var_s if with_scale else 1.0
    t = mu_d - scale * R @ mu_s
    return SimilarityTransform(scale, R, t)


@dataclass(frozen=True)
class IcpParams:
    """Settings for rigid ICP.

    ``rejection_multiplier`` drops correspondences farther than that many
    times the median correspondence distance; values below 1 make the
    rejection tight. With ``reject_boundary`` a correspondence is also
    dropped when its closest target point lies on the target's open
    boundary, which is where source points beyond a cropped rim all land.
    """

    max_iterations: int = 50
    convergence_tol: float = 1e-6
    rejection_multiplier: float = 3.0
    sample_count: int = 20000
    seed: int = 0
    reject_boundary: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if not (self.convergence_tol > 0 and self.rejection_multiplier > 0):
            raise InputError("ICP tolerances must be positive")
        if self.sample_count < 3:
            raise InputError("sample_count must be >= 3")

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "convergence_tol": self.convergence_tol,
            "rejection_multiplier": self.rejection_multiplier,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "reject_boundary": self.reject_boundary,
        }


@dataclass
class IcpDiagnostics:
    iterations: int
    rms: float
    correspondences: int
    converged: bool
    rms_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "rms": self.rms,
            "correspondences": self.correspondences,
            "converged": self.converged,
            "rms_history": list(self.rms_history),
        }


class _BoundaryTest:
    """Flags closest points that sit on a mesh's open boundary."""

    def __init__(self, mesh: TriangleMesh):
        bv = mesh.boundary_vertices()
        F = mesh.faces
        e = np.sort(np.stack([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]], axis=1), axis=2)
        flat = e.reshape(-1, 2)
        _, inv, count = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
        self.edge_open = (count[inv.ravel()] == 1).reshape(-1, 3)
        self.vert_open = bv[F]
        self.rim_face = self.vert_open.any(axis=1)
        self.tri = mesh.vertices[F]
        self.eps = 1e-9 * max(mesh.bbox_diagonal(), 1e-300)

    def __call__(self, points: np.ndarray, faces: np.ndarray) -> np.ndarray:
        out = np.zeros(len(points), dtype=bool)
        sel = np.flatnonzero(self.rim_face[faces])
        if not len(sel):
            return out
        p = points[sel]
        f = faces[sel]
        tri = self.tri[f]
        hit = np.zeros(len(sel), dtype=bool)
        for k in range(3):
            a, b = tri[:, k], tri[:, (k + 1) % 3]
            ab = b - a
            t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
            d_edge = np.linalg.norm(p - a - t[:, None] * ab, axis=1)
            d_vert = np.linalg.norm(p - a, axis=1)
            hit |= (self.edge_open[f, k] & (d_edge <= self.eps)) | (self.vert_open[f, k] & (d_vert <= self.eps))
        out[sel] = hit
        return out


def icp_rigid(src: TriangleMesh, dst: TriangleMesh, params: IcpParams = IcpParams(),
              dst_index: Optional[SpatialIndex] = None):
    """Rigid point-to-point ICP of ``src`` onto ``dst``.

    Returns ``(transform, diagnostics)``; the transform maps src into dst's
    frame and always has unit scale. If the RMS fails to decrease for five
    consecutive iterations the best transform seen is returned with
    ``converged=False``.
    """
    index = dst_index or SpatialIndex(dst)
    on_rim = _BoundaryTest(dst) if params.reject_boundary else None
    base = sample_surface(src, params.sample_count, params.seed).points
    scale_ref = max(src.bbox_diagonal(), dst.bbox_diagonal(), 1e-300)

    total = SimilarityTransform.identity()
    best_t, best_rms, best_n = total, np.inf, 0
    history: list[float] = []
    stalled = 0
    converged = False
    n_used = 0
    it = 0
    for it in range(1, params.max_iterations + 1):
        pts = total.apply(base)
        near = index.query(pts)
        d = near.distances
        keep = d <= params.rejection_multiplier * np.median(d)
        if on_rim is not None:
            keep &= ~on_rim(near.points, near.faces)
        n_used = int(keep.sum())
        if n_used == 0:
            raise NumericalError("no overlap")
        rms = float(np.sqrt(np.mean(d[keep] ** 2)))
        prev = history[-1] if history else None
        history.append(rms)
        if rms < best_rms:
            best_t, best_rms, best_n = total, rms, n_used
        if rms <= 1e-12 * scale_ref:
            converged = True
            break
        if prev is not None:
            if abs(prev - rms) <= params.convergence_tol * prev:
                converged = True
                break
            stalled = stalled + 1 if rms >= prev else 0
            if stalled >= 5:
                logger.warning("ICP stalled after %d iterations; returning best", it)
                return best_t, IcpDiagnostics(it, best_rms, best_n, False, history)
        if n_used < 3:
            raise NumericalError("no overlap")
        try:
            step = procrustes_umeyama(pts[keep], near.points[keep], with_scale=False)
        except NumericalError:
            break
        total = compose(step, total)
    if not converged and best_t is not total:
        # loop ran out without evaluating the last update; keep the best evaluated one
        total, rms, n_used = best_t, best_rms, best_n
    return total, IcpDiagnostics(it, rms, n_used, converged, history)


def crop_by_labels(mesh: TriangleMesh) -> TriangleMesh:
    """Faces with at least one wound vertex, compactly re-indexed."""
    wound = mesh.wound_mask()
    if not wound.any():
        raise InputError("empty wound region")
    keep = wound[mesh.faces].any(axis=1)
    return submesh(mesh, keep)


def submesh(mesh: TriangleMesh, face_mask: np.ndarray) -> TriangleMesh:
    faces = mesh.faces[face_mask]
    used = np.unique(faces)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(
        mesh.vertices[used],
        remap[faces],
        None if mesh.labels is None else mesh.labels[used],
        None if mesh.colors is None else mesh.colors[used],
    )


def _centroids(mesh: TriangleMesh) -> np.ndarray:
    t = mesh.triangles
    return (t[:, 0:3] + t[:, 3:6] + t[:, 6:9]) / 3.0


def crop_by_proximity(mesh: TriangleMesh, ref: TriangleMesh, delta: float,
                      ref_index: Optional[SpatialIndex] = None) -> TriangleMesh:
    """Faces of ``mesh`` whose centroid lies within ``delta`` of ``ref``'s surface."""
    if not delta > 0:
        raise InputError("delta must be positive")
    index = ref_index or SpatialIndex(ref)
    d = index.query(_centroids(mesh)).distances
    keep = d <= delta
    if not keep.any():
        raise InputError("empty crop")
    return submesh(mesh, keep)


def crop_by_reference_region(mesh: TriangleMesh, ref: TriangleMesh, region: np.ndarray,
                             delta: float, ref_index: Optional[SpatialIndex] = None) -> TriangleMesh:
    """Faces of ``mesh`` whose centroid projects onto a face of ``ref`` inside
    ``region`` (boolean per ref face) at distance at most ``delta``.

    Unlike :func:`crop_by_proximity` this does not dilate the crop past the
    reference region's border, so aligned copies of the ground truth crop to
    exactly the same faces.
    """
    index = ref_index or SpatialIndex(ref)
    near = index.query(_centroids(mesh))
    keep = region[near.faces] & (near.distances <= delta)
    if not keep.any():
        raise InputError("empty crop")
    return submesh(mesh, keep)


def camera_centers_by_name(gt_cams: Sequence[CameraView], est_cams: Sequence[CameraView]):
    """Matched (est_centers, gt_centers, names), sorted by view name."""
    gt = {c.name: c for c in gt_cams}
    est = {c.name: c for c in est_cams}
    if len(gt) != len(gt_cams) or len(est) != len(est_cams):
        raise InputError("duplicate camera names")
    names = sorted(set(gt) & set(est))
    if len(names) < 3:
        raise InputError("insufficient camera correspondences")
    return (np.array([est[n].center for n in names]),
            np.array([gt[n].center for n in names]), names)


def mean_edge_length(mesh: TriangleMesh) -> float:
    return float(np.mean(mesh.edge_lengths()))


@dataclass
class AlignedPair:
    gt_wound: TriangleMesh
    est_wound: TriangleMesh
    coarse: SimilarityTransform
    fine: SimilarityTransform
    diagnostics: IcpDiagnostics
    delta: float
    est_aligned: TriangleMesh

    @property
    def total(self) -> SimilarityTransform:
        return compose(self.fine, self.coarse)


def align_pipeline(gt: TriangleMesh, est: TriangleMesh, gt_cams: Sequence[CameraView],
                   est_cams: Sequence[CameraView], icp: IcpParams = IcpParams(),
                   delta: Optional[float] = None) -> AlignedPair:
    """Bring ``est`` into ``gt``'s frame and crop both to the wound.

    ``delta`` defaults to twice the mean edge length of the ground-truth
    wound crop. The final crop of the estimate keeps faces whose centroid
    falls onto the ground-truth wound crop within ``delta``.
    """
    if gt.labels is None:
        raise InputError("ground-truth mesh has no labels")
    est_c, gt_c, _ = camera_centers_by_name(gt_cams, est_cams)
    coarse = procrustes_umeyama(est_c, gt_c, with_scale=True)

    gt_full_index = SpatialIndex(gt)
    gt_wound = crop_by_labels(gt)
    wound_faces = gt.wound_mask()[gt.faces].any(axis=1)
    if delta is None:
        delta = 2.0 * mean_edge_length(gt_wound)
    gt_wound_index = SpatialIndex(gt_wound)

    est1 = apply_transform(coarse, est)
    est1_wound = crop_by_proximity(est1, gt_wound, delta, gt_wound_index)
    fine, diag = icp_rigid(est1_wound, gt_wound, icp, gt_wound_index)

    total = compose(fine, coarse)
    est2 = apply_transform(total, est)
    est2_wound = crop_by_reference_region(est2, gt, wound_faces, delta, gt_full_index)
    return AlignedPair(gt_wound, est2_wound, coarse, fine, diag, float(delta), est2)
