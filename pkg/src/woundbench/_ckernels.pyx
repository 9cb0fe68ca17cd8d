# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: exact closest-point-on-mesh queries and z-buffer
rasterization. Must stay result-identical to ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, ceil, INFINITY, NAN
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.int64_t i64

cdef enum:
    LEAF_SIZE = 4


cdef inline void _closest_on_triangle(double px, double py, double pz,
                                      const double* t, double* out) noexcept nogil:
    # Voronoi-region walk; t = (ax, ay, az, bx, by, bz, cx, cy, cz)
    cdef double ax = t[0], ay = t[1], az = t[2]
    cdef double bx = t[3], by = t[4], bz = t[5]
    cdef double cx = t[6], cy = t[7], cz = t[8]
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    cdef double bpx, bpy, bpz, cpx, cpy, cpz
    cdef double d3, d4, d5, d6, va, vb, vc, v, w, denom
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = ax; out[1] = ay; out[2] = az
        return
    bpx = px - bx; bpy = py - by; bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        out[0] = bx; out[1] = by; out[2] = bz
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = ax + v * abx; out[1] = ay + v * aby; out[2] = az + v * abz
        return
    cpx = px - cx; cpy = py - cy; cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        out[0] = cx; out[1] = cy; out[2] = cz
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = ax + w * acx; out[1] = ay + w * acy; out[2] = az + w * acz
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = bx + w * (cx - bx); out[1] = by + w * (cy - by); out[2] = bz + w * (cz - bz)
        return
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = ax + abx * v + acx * w
    out[1] = ay + aby * v + acy * w
    out[2] = az + abz * v + acz * w


cdef inline double _box_dist2(double px, double py, double pz,
                              const double* lo, const double* hi) noexcept nogil:
    cdef double d = 0.0, e
    if px < lo[0]:
        e = lo[0] - px; d += e * e
    elif px > hi[0]:
        e = px - hi[0]; d += e * e
    if py < lo[1]:
        e = lo[1] - py; d += e * e
    elif py > hi[1]:
        e = py - hi[1]; d += e * e
    if pz < lo[2]:
        e = lo[2] - pz; d += e * e
    elif pz > hi[2]:
        e = pz - hi[2]; d += e * e
    return d


def closest_points_brute(const double[:, ::1] tri, const double[:, ::1] queries):
    """Exhaustive scan; used by the benchmark and small meshes."""
    cdef Py_ssize_t nq = queries.shape[0], nf = tri.shape[0], i, f
    closest = np.empty((nq, 3), dtype=np.float64)
    dist = np.empty(nq, dtype=np.float64)
    face = np.empty(nq, dtype=np.int64)
    cdef double[:, ::1] cv = closest
    cdef double[::1] dv = dist
    cdef i64[::1] fv = face
    cdef double out[3]
    cdef double best[3]
    cdef double bd, d2, dx, dy, dz
    cdef i64 bf
    with nogil:
        for i in range(nq):
            bd = INFINITY
            bf = -1
            best[0] = best[1] = best[2] = NAN
            for f in range(nf):
                _closest_on_triangle(queries[i, 0], queries[i, 1], queries[i, 2], &tri[f, 0], out)
                dx = queries[i, 0] - out[0]; dy = queries[i, 1] - out[1]; dz = queries[i, 2] - out[2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < bd:
                    bd = d2; bf = f
                    best[0] = out[0]; best[1] = out[1]; best[2] = out[2]
            cv[i, 0] = best[0]; cv[i, 1] = best[1]; cv[i, 2] = best[2]
            dv[i] = sqrt(bd)
            fv[i] = bf
    return closest, dist, face


cdef class TriangleLocator:
    """Bounding-volume hierarchy over triangles with exact nearest queries.

    Ties in distance resolve to the lowest face index, matching the
    pure-Python backend.
    """

    cdef const double[:, ::1] tri
    cdef double[:, ::1] cent
    cdef double[:, ::1] lo
    cdef double[:, ::1] hi
    cdef i64[::1] left
    cdef i64[::1] right
    cdef i64[::1] start
    cdef i64[::1] count
    cdef i64[::1] order
    cdef Py_ssize_t n_nodes

    def __init__(self, const double[:, ::1] tri):
        cdef Py_ssize_t nf = tri.shape[0]
        if nf == 0:
            raise ValueError("empty mesh")
        self.tri = tri
        c = (np.asarray(tri[:, 0:3]) + np.asarray(tri[:, 3:6]) + np.asarray(tri[:, 6:9])) / 3.0
        self.cent = np.ascontiguousarray(c)
        cap = 2 * nf + 1
        self.lo = np.empty((cap, 3), dtype=np.float64)
        self.hi = np.empty((cap, 3), dtype=np.float64)
        self.left = np.full(cap, -1, dtype=np.int64)
        self.right = np.full(cap, -1, dtype=np.int64)
        self.start = np.zeros(cap, dtype=np.int64)
        self.count = np.zeros(cap, dtype=np.int64)
        self.order = np.arange(nf, dtype=np.int64)
        self.n_nodes = 0
        with nogil:
            self._build(0, nf)

    @property
    def node_count(self):
        return self.n_nodes

    cdef Py_ssize_t _build(self, Py_ssize_t s, Py_ssize_t e) noexcept nogil:
        cdef Py_ssize_t node = self.n_nodes
        cdef Py_ssize_t i, k, j, axis, mid
        cdef i64 f, tmp
        cdef double cmin[3]
        cdef double cmax[3]
        cdef double split, ext, best_ext
        self.n_nodes += 1
        for k in range(3):
            self.lo[node, k] = INFINITY
            self.hi[node, k] = -INFINITY
            cmin[k] = INFINITY
            cmax[k] = -INFINITY
        for i in range(s, e):
            f = self.order[i]
            for k in range(3):
                for j in range(3):
                    if self.tri[f, 3 * j + k] < self.lo[node, k]:
                        self.lo[node, k] = self.tri[f, 3 * j + k]
                    if self.tri[f, 3 * j + k] > self.hi[node, k]:
                        self.hi[node, k] = self.tri[f, 3 * j + k]
                if self.cent[f, k] < cmin[k]:
                    cmin[k] = self.cent[f, k]
                if self.cent[f, k] > cmax[k]:
                    cmax[k] = self.cent[f, k]
        self.start[node] = s
        self.count[node] = e - s
        if e - s <= LEAF_SIZE:
            return node
        axis = 0
        best_ext = cmax[0] - cmin[0]
        for k in range(1, 3):
            ext = cmax[k] - cmin[k]
            if ext > best_ext:
                best_ext = ext
                axis = k
        split = 0.5 * (cmin[axis] + cmax[axis])
        i = s
        j = e - 1
        while i <= j:
            if self.cent[self.order[i], axis] < split:
                i += 1
            else:
                tmp = self.order[i]
                self.order[i] = self.order[j]
                self.order[j] = tmp
                j -= 1
        mid = i
        if mid == s or mid == e:
            mid = (s + e) // 2
        self.left[node] = self._build(s, mid)
        self.right[node] = self._build(mid, e)
        self.count[node] = 0
        return node

    def query(self, const double[:, ::1] queries):
        """Return ``(closest (m,3), distance (m,), face (m,))``."""
        cdef Py_ssize_t nq = queries.shape[0], i, k, top, node, f
        closest = np.empty((nq, 3), dtype=np.float64)
        dist = np.empty(nq, dtype=np.float64)
        face = np.empty(nq, dtype=np.int64)
        cdef double[:, ::1] cv = closest
        cdef double[::1] dv = dist
        cdef i64[::1] fv = face
        cdef i64* stack = <i64*> malloc((self.n_nodes + 1) * sizeof(i64))
        cdef double out[3]
        cdef double best[3]
        cdef double px, py, pz, bd, d2, dx, dy, dz, dl, dr
        cdef i64 bf, l, r
        if stack == NULL:
            raise MemoryError()
        try:
            with nogil:
                for i in range(nq):
                    px = queries[i, 0]; py = queries[i, 1]; pz = queries[i, 2]
                    bd = INFINITY
                    bf = -1
                    best[0] = best[1] = best[2] = NAN
                    top = 0
                    stack[top] = 0
                    top += 1
                    while top > 0:
                        top -= 1
                        node = stack[top]
                        if _box_dist2(px, py, pz, &self.lo[node, 0], &self.hi[node, 0]) > bd:
                            continue
                        if self.left[node] < 0:
                            for k in range(self.start[node], self.start[node] + self.count[node]):
                                f = self.order[k]
                                _closest_on_triangle(px, py, pz, &self.tri[f, 0], out)
                                dx = px - out[0]; dy = py - out[1]; dz = pz - out[2]
                                d2 = dx * dx + dy * dy + dz * dz
                                if d2 < bd or (d2 == bd and f < bf):
                                    bd = d2; bf = f
                                    best[0] = out[0]; best[1] = out[1]; best[2] = out[2]
                        else:
                            l = self.left[node]
                            r = self.right[node]
                            dl = _box_dist2(px, py, pz, &self.lo[l, 0], &self.hi[l, 0])
                            dr = _box_dist2(px, py, pz, &self.lo[r, 0], &self.hi[r, 0])
                            # push the farther child first so the nearer is popped next
                            if dl <= dr:
                                stack[top] = r; top += 1
                                stack[top] = l; top += 1
                            else:
                                stack[top] = l; top += 1
                                stack[top] = r; top += 1
                    cv[i, 0] = best[0]; cv[i, 1] = best[1]; cv[i, 2] = best[2]
                    dv[i] = sqrt(bd)
                    fv[i] = bf
        finally:
            free(stack)
        return closest, dist, face


cdef inline bint _top_left(double dx, double dy) noexcept nogil:
    return dy < 0.0 or (dy == 0.0 and dx > 0.0)


cdef void _draw(double x0, double y0, double iz0,
                double x1, double y1, double iz1,
                double x2, double y2, double iz2,
                i64 fid, Py_ssize_t width, Py_ssize_t height,
                double[:, ::1] depth, i64[:, ::1] ids) noexcept nogil:
    cdef double area, t, px, py, w0, w1, w2, iz, z
    cdef double lo_x, hi_x, lo_y, hi_y
    cdef Py_ssize_t c0, c1, r0, r1, row, col
    cdef bint tl0, tl1, tl2
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area == 0.0 or area != area:
        return
    if area < 0.0:
        t = x1; x1 = x2; x2 = t
        t = y1; y1 = y2; y2 = t
        t = iz1; iz1 = iz2; iz2 = t
        area = -area
    lo_x = min(x0, min(x1, x2)) - 0.5
    hi_x = max(x0, max(x1, x2)) - 0.5
    lo_y = min(y0, min(y1, y2)) - 0.5
    hi_y = max(y0, max(y1, y2)) - 0.5
    if hi_x < 0.0 or hi_y < 0.0 or lo_x > width - 1 or lo_y > height - 1:
        return
    c0 = <Py_ssize_t> ceil(max(lo_x, 0.0))
    c1 = <Py_ssize_t> floor(min(hi_x, <double> (width - 1)))
    r0 = <Py_ssize_t> ceil(max(lo_y, 0.0))
    r1 = <Py_ssize_t> floor(min(hi_y, <double> (height - 1)))
    # edge v1->v2 weights v0, v2->v0 weights v1, v0->v1 weights v2
    tl0 = _top_left(x2 - x1, y2 - y1)
    tl1 = _top_left(x0 - x2, y0 - y2)
    tl2 = _top_left(x1 - x0, y1 - y0)
    for row in range(r0, r1 + 1):
        py = row + 0.5
        for col in range(c0, c1 + 1):
            px = col + 0.5
            w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            if w0 < 0.0 or (w0 == 0.0 and not tl0):
                continue
            w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
            if w1 < 0.0 or (w1 == 0.0 and not tl1):
                continue
            w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
            if w2 < 0.0 or (w2 == 0.0 and not tl2):
                continue
            iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area
            z = 1.0 / iz
            if z < depth[row, col]:
                depth[row, col] = z
                ids[row, col] = fid


def rasterize(const double[:, ::1] xyz, const i64[:, ::1] faces, Py_ssize_t width, Py_ssize_t height,
              double fx, double fy, double cx, double cy, double near):
    """Z-buffer camera-space triangles. Returns ``(depth, face_id)``; empty
    pixels hold ``inf`` and ``-1``."""
    depth = np.full((height, width), np.inf, dtype=np.float64)
    ids = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, ::1] dv = depth
    cdef i64[:, ::1] iv = ids
    cdef Py_ssize_t nf = faces.shape[0], f, k, j, n_in, n_out
    cdef double P[3][3]
    cdef double Q[4][3]
    cdef double sx[4]
    cdef double sy[4]
    cdef double siz[4]
    cdef double s
    cdef Py_ssize_t a, b, i0, i1
    with nogil:
        for f in range(nf):
            n_in = 0
            for k in range(3):
                for j in range(3):
                    P[k][j] = xyz[faces[f, k], j]
                if P[k][2] > near:
                    n_in += 1
            if n_in == 0:
                continue
            if n_in == 3:
                for k in range(3):
                    sx[k] = fx * P[k][0] / P[k][2] + cx
                    sy[k] = fy * P[k][1] / P[k][2] + cy
                    siz[k] = 1.0 / P[k][2]
                _draw(sx[0], sy[0], siz[0], sx[1], sy[1], siz[1], sx[2], sy[2], siz[2],
                      f, width, height, dv, iv)
                continue
            # clip the polygon against z >= near
            n_out = 0
            for a in range(3):
                b = (a + 1) % 3
                if P[a][2] > near:
                    for j in range(3):
                        Q[n_out][j] = P[a][j]
                    n_out += 1
                if (P[a][2] > near) != (P[b][2] > near):
                    # interpolate from the front endpoint so a shared edge clips
                    # to the same point in both of its triangles
                    if P[a][2] > near:
                        i0 = a
                        i1 = b
                    else:
                        i0 = b
                        i1 = a
                    s = (near - P[i0][2]) / (P[i1][2] - P[i0][2])
                    for j in range(3):
                        Q[n_out][j] = P[i0][j] + s * (P[i1][j] - P[i0][j])
                    Q[n_out][2] = near
                    n_out += 1
            for k in range(n_out):
                sx[k] = fx * Q[k][0] / Q[k][2] + cx
                sy[k] = fy * Q[k][1] / Q[k][2] + cy
                siz[k] = 1.0 / Q[k][2]
            for k in range(1, n_out - 1):
                _draw(sx[0], sy[0], siz[0], sx[k], sy[k], siz[k], sx[k + 1], sy[k + 1], siz[k + 1],
                      f, width, height, dv, iv)
    return depth, ids
