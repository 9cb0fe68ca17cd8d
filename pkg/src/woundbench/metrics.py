"""Surface, 3D segmentation and 2D mask metrics.

Surface metrics work on area-uniform samples with exact point-to-triangle
distances. Both meshes are sampled with the same seed, which makes
``asd(a, b)`` and ``asd(b, a)`` bitwise equal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError
from .geometry import SpatialIndex, TriangleMesh, sample_surface
from .mesh_io import BinaryMask2D

DEFAULT_SAMPLES = 100_000

TP_COLOR = (173, 216, 230)
FP_COLOR = (0, 0, 255)
FN_COLOR = (255, 255, 0)
TN_COLOR = (128, 128, 128)


@dataclass(frozen=True)
class DirectedDistances:
    """Nearest-surface distances and normal agreement from samples of one mesh to another."""

    distances: np.ndarray
    normal_dots: np.ndarray


def directed(a: TriangleMesh, b: TriangleMesh, n: int, seed: int,
             b_index: Optional[SpatialIndex] = None) -> DirectedDistances:
    s = sample_surface(a, n, seed)
    near = (b_index or SpatialIndex(b)).query(s.points)
    dots = np.abs(np.einsum("ij,ij->i", s.normals, near.normals))
    return DirectedDistances(near.distances, np.minimum(dots, 1.0))


def percentile_nearest_rank(values: np.ndarray, q: int = 90) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value (1-based)."""
    n = len(values)
    k = (q * n + 99) // 100
    return float(np.partition(values, k - 1)[k - 1])


@dataclass(frozen=True)
class SurfaceMetrics:
    asd: float
    hd90: float
    nc: float
    sample_count: int
    seed: int

    def to_dict(self) -> dict:
        return {"asd": self.asd, "hd90": self.hd90, "nc": self.nc,
                "sample_count": self.sample_count, "seed": self.seed}


def _check(a: TriangleMesh, b: TriangleMesh, n: int) -> None:
    if a.n_faces == 0 or b.n_faces == 0:
        raise InputError("empty mesh")
    if n < 1:
        raise InputError("sample count must be >= 1")


def surface_metrics(a: TriangleMesh, b: TriangleMesh, n: int = DEFAULT_SAMPLES,
                    seed: int = 0) -> SurfaceMetrics:
    """ASD, HD90 and normal consistency from a single pair of directed passes."""
    _check(a, b, n)
    ab = directed(a, b, n, seed)
    ba = directed(b, a, n, seed)
    return SurfaceMetrics(
        asd=0.5 * (float(ab.distances.mean()) + float(ba.distances.mean())),
        hd90=max(percentile_nearest_rank(ab.distances), percentile_nearest_rank(ba.distances)),
        nc=0.5 * (float(ab.normal_dots.mean()) + float(ba.normal_dots.mean())),
        sample_count=n,
        seed=seed,
    )


def asd(a: TriangleMesh, b: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Average symmetric surface distance."""
    _check(a, b, n)
    return 0.5 * (float(directed(a, b, n, seed).distances.mean())
                  + float(directed(b, a, n, seed).distances.mean()))


def hd90(a: TriangleMesh, b: TriangleMesh, n: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Larger of the two directed 90th-percentile surface distances."""
    _check(a, b, n)
    return max(percentile_nearest_rank(directed(a, b, n, seed).distances),
               percentile_nearest_rank(directed(b, a, n, seed).distances))


def normal_consistency(a: TriangleMesh, b: TriangleMesh, n: int = DEFAULT_SAMPLES,
                       seed: int = 0) -> float:
    """Mean |cos| between face normals at sample and nearest point, symmetrized."""
    _check(a, b, n)
    return 0.5 * (float(directed(a, b, n, seed).normal_dots.mean())
                  + float(directed(b, a, n, seed).normal_dots.mean()))


def bahd(g, s) -> float:
    """Balanced average Hausdorff distance between point sets.

    Both directed nearest-distance sums are divided by the ground-truth
    count ``|g|``, so the metric is not symmetric in its arguments.
    """
    g = np.asarray(g, dtype=np.float64).reshape(-1, 3)
    s = np.asarray(s, dtype=np.float64).reshape(-1, 3)
    if len(g) == 0 or len(s) == 0:
        raise InputError("empty point set")
    d_gs, _ = cKDTree(s).query(g)
    d_sg, _ = cKDTree(g).query(s)
    return (float(np.sum(d_gs)) + float(np.sum(d_sg))) / (2.0 * len(g))


@dataclass(frozen=True)
class SegmentationCounts:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall}


def _match(gt: TriangleMesh, pred: TriangleMesh, tau: float):
    """Per-vertex TP/FP flags on pred wound vertices and FN flags on GT wound vertices."""
    if gt.labels is None or pred.labels is None:
        raise InputError("both meshes need labels")
    if tau < 0:
        raise InputError("tau must be >= 0")
    g_idx = np.flatnonzero(gt.labels == 1)
    p_idx = np.flatnonzero(pred.labels == 1)
    if len(g_idx) == 0:
        raise InputError("empty ground truth segmentation")
    g_pts = gt.vertices[g_idx]
    p_pts = pred.vertices[p_idx]
    if len(p_idx):
        d_p, _ = cKDTree(g_pts).query(p_pts)
        d_g, _ = cKDTree(p_pts).query(g_pts)
    else:
        d_p = np.zeros(0)
        d_g = np.full(len(g_idx), np.inf)
    return g_idx, p_idx, d_p <= tau, d_g > tau


def vertex_precision_recall(gt: TriangleMesh, pred: TriangleMesh, tau: float = 0.0) -> SegmentationCounts:
    """Vertex-level TP/FP/FN where a match means a wound vertex of the other
    mesh within ``tau`` (``tau=0`` demands identical positions)."""
    _, _, p_hit, g_miss = _match(gt, pred, tau)
    return SegmentationCounts(int(p_hit.sum()), int((~p_hit).sum()), int(g_miss.sum()))


def confusion_colored_mesh(gt: TriangleMesh, pred: TriangleMesh, tau: float = 0.0) -> TriangleMesh:
    """Copy of ``pred`` with confusion colors per vertex.

    Predicted wound vertices are TP or FP. A predicted background vertex is
    colored FN when it lies within ``tau`` of a missed GT wound vertex, and
    grey otherwise. When both meshes share vertex positions (``tau=0``)
    the color counts equal :func:`vertex_precision_recall`.
    """
    g_idx, p_idx, p_hit, g_miss = _match(gt, pred, tau)
    colors = np.tile(np.array(TN_COLOR, dtype=np.uint8), (pred.n_vertices, 1))
    colors[p_idx[p_hit]] = TP_COLOR
    colors[p_idx[~p_hit]] = FP_COLOR
    missed = gt.vertices[g_idx[g_miss]]
    bg = np.flatnonzero(pred.labels != 1)
    if len(missed) and len(bg):
        d, _ = cKDTree(missed).query(pred.vertices[bg])
        colors[bg[d <= tau]] = FN_COLOR
    return pred.replace(colors=colors)


def _mask_pair(a: BinaryMask2D, b: BinaryMask2D):
    if a.pixels.shape != b.pixels.shape:
        raise InputError(f"mask dimension mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    inter = int(np.count_nonzero(a.pixels & b.pixels))
    return inter, int(np.count_nonzero(a.pixels)), int(np.count_nonzero(b.pixels))


def iou(a: BinaryMask2D, b: BinaryMask2D) -> float:
    inter, na, nb = _mask_pair(a, b)
    union = na + nb - inter
    return 1.0 if union == 0 else inter / union


def dice(a: BinaryMask2D, b: BinaryMask2D) -> float:
    inter, na, nb = _mask_pair(a, b)
    return 1.0 if na + nb == 0 else 2 * inter / (na + nb)
