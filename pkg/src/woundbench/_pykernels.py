"""Pure numpy/scipy implementations of the hot kernels.

Selected automatically when the compiled ``_ckernels`` extension is not
available. Arithmetic mirrors the compiled code operation for operation so
both backends return the same answers.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

_BATCH = 4096


def closest_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point on each triangle ``tri[i]`` (flattened a, b, c) to ``p[i]``."""
    ax, ay, az = tri[:, 0], tri[:, 1], tri[:, 2]
    bx, by, bz = tri[:, 3], tri[:, 4], tri[:, 5]
    cx, cy, cz = tri[:, 6], tri[:, 7], tri[:, 8]
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(p)
    todo = np.ones(len(p), dtype=bool)

    def take(mask, x, y, z):
        nonlocal todo
        m = todo & mask
        out[m, 0] = x[m]
        out[m, 1] = y[m]
        out[m, 2] = z[m]
        todo &= ~mask

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0.0) & (d2 <= 0.0), ax, ay, az)
        take((d3 >= 0.0) & (d4 <= d3), bx, by, bz)
        v = d1 / (d1 - d3)
        take((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), ax + v * abx, ay + v * aby, az + v * abz)
        take((d6 >= 0.0) & (d5 <= d6), cx, cy, cz)
        w = d2 / (d2 - d6)
        take((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), ax + w * acx, ay + w * acy, az + w * acz)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take(
            (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0),
            bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz),
        )
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        take(np.ones(len(p), dtype=bool),
             ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w)
    return out


def _sq_dist(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    dx = p[:, 0] - q[:, 0]
    dy = p[:, 1] - q[:, 1]
    dz = p[:, 2] - q[:, 2]
    return dx * dx + dy * dy + dz * dz


def closest_points_brute(tri: np.ndarray, queries: np.ndarray):
    nq = len(queries)
    closest = np.empty((nq, 3))
    best = np.full(nq, np.inf)
    face = np.full(nq, -1, dtype=np.int64)
    for f in range(len(tri)):
        c = closest_on_triangles(queries, np.broadcast_to(tri[f], (nq, 9)))
        d2 = _sq_dist(queries, c)
        better = d2 < best
        best[better] = d2[better]
        face[better] = f
        closest[better] = c[better]
    return closest, np.sqrt(best), face


class TriangleLocator:
    """Exact nearest-triangle queries via a centroid k-d tree.

    For a query ``q`` the closest point on the triangle with the nearest
    centroid gives an upper bound ``u``. Any triangle at distance <= u has
    its centroid within ``u + r_max`` of ``q`` where ``r_max`` is the largest
    centroid-to-vertex radius, so a ball query plus a per-triangle radius
    filter yields an exact candidate set.
    """

    def __init__(self, tri: np.ndarray):
        tri = np.ascontiguousarray(tri, dtype=np.float64)
        if len(tri) == 0:
            raise ValueError("empty mesh")
        self.tri = tri
        a, b, c = tri[:, 0:3], tri[:, 3:6], tri[:, 6:9]
        self.cent = (a + b + c) / 3.0
        self.radius = np.sqrt(np.max(np.stack([
            _sq_dist(a, self.cent), _sq_dist(b, self.cent), _sq_dist(c, self.cent)
        ]), axis=0))
        self.r_max = float(self.radius.max())
        self.tree = cKDTree(self.cent)

    @property
    def node_count(self) -> int:
        return self.tree.size

    def query(self, queries: np.ndarray):
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        nq = len(queries)
        closest = np.empty((nq, 3))
        dist = np.empty(nq)
        face = np.empty(nq, dtype=np.int64)
        for s in range(0, nq, _BATCH):
            q = queries[s:s + _BATCH]
            c, d, f = self._query_batch(q)
            closest[s:s + _BATCH] = c
            dist[s:s + _BATCH] = d
            face[s:s + _BATCH] = f
        return closest, dist, face

    def _query_batch(self, q: np.ndarray):
        _, guess = self.tree.query(q)
        guess = np.asarray(guess, dtype=np.int64)
        upper = np.sqrt(_sq_dist(q, closest_on_triangles(q, self.tri[guess])))
        # tiny slack so rounding in the bound never drops the true minimiser
        radii = upper + self.r_max
        radii = radii + 1e-9 * np.maximum(radii, 1.0)
        lists = self.tree.query_ball_point(q, radii)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
        qid = np.repeat(np.arange(len(q)), counts)
        cand = np.fromiter((i for x in lists for i in x), dtype=np.int64, count=int(counts.sum()))
        cdist = np.sqrt(_sq_dist(q[qid], self.cent[cand])) - self.radius[cand]
        keep = cdist <= radii[qid]
        qid, cand = qid[keep], cand[keep]
        pts = closest_on_triangles(q[qid], self.tri[cand])
        d2 = _sq_dist(q[qid], pts)
        order = np.lexsort((cand, d2, qid))
        first = order[np.r_[True, qid[order][1:] != qid[order][:-1]]]
        return pts[first], np.sqrt(d2[first]), cand[first]


def _top_left(dx: float, dy: float) -> bool:
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


def _draw(x0, y0, iz0, x1, y1, iz1, x2, y2, iz2, fid, width, height, depth, ids):
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area == 0.0 or math.isnan(area):
        return
    if area < 0.0:
        x1, x2 = x2, x1
        y1, y2 = y2, y1
        iz1, iz2 = iz2, iz1
        area = -area
    lo_x = min(x0, x1, x2) - 0.5
    hi_x = max(x0, x1, x2) - 0.5
    lo_y = min(y0, y1, y2) - 0.5
    hi_y = max(y0, y1, y2) - 0.5
    if hi_x < 0.0 or hi_y < 0.0 or lo_x > width - 1 or lo_y > height - 1:
        return
    c0 = math.ceil(max(lo_x, 0.0))
    c1 = math.floor(min(hi_x, float(width - 1)))
    r0 = math.ceil(max(lo_y, 0.0))
    r1 = math.floor(min(hi_y, float(height - 1)))
    if c1 < c0 or r1 < r0:
        return
    px = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] + 0.5
    py = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] + 0.5
    w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
    w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
    inside = (w0 > 0.0) | ((w0 == 0.0) & _top_left(x2 - x1, y2 - y1))
    inside &= (w1 > 0.0) | ((w1 == 0.0) & _top_left(x0 - x2, y0 - y2))
    inside &= (w2 > 0.0) | ((w2 == 0.0) & _top_left(x1 - x0, y1 - y0))
    if not inside.any():
        return
    z = 1.0 / ((w0 * iz0 + w1 * iz1 + w2 * iz2) / area)
    d = depth[r0:r1 + 1, c0:c1 + 1]
    win = inside & (z < d)
    d[win] = z[win]
    ids[r0:r1 + 1, c0:c1 + 1][win] = fid


def rasterize(xyz, faces, width, height, fx, fy, cx, cy, near):
    depth = np.full((height, width), np.inf)
    ids = np.full((height, width), -1, dtype=np.int64)
    xyz = np.asarray(xyz, dtype=np.float64)
    for f, tri in enumerate(np.asarray(faces)):
        P = xyz[tri]
        front = P[:, 2] > near
        if not front.any():
            continue
        if front.all():
            poly = [tuple(p) for p in P]
        else:
            poly = []
            for a in range(3):
                b = (a + 1) % 3
                if front[a]:
                    poly.append(tuple(P[a]))
                if front[a] != front[b]:
                    i0, i1 = (a, b) if front[a] else (b, a)
                    s = (near - P[i0, 2]) / (P[i1, 2] - P[i0, 2])
                    q = P[i0] + s * (P[i1] - P[i0])
                    poly.append((q[0], q[1], near))
        scr = [(fx * X / Z + cx, fy * Y / Z + cy, 1.0 / Z) for X, Y, Z in poly]
        for k in range(1, len(scr) - 1):
            _draw(*scr[0], *scr[k], *scr[k + 1], f, width, height, depth, ids)
    return depth, ids
