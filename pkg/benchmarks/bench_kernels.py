"""Time the compiled and numpy kernel backends on the two hot paths.

Run with ``python3 benchmarks/bench_kernels.py``. Each backend answers the
same nearest-surface queries and renders the same view; results are checked
for agreement before timings are reported.
"""

import argparse
import time

import numpy as np

from woundbench.geometry import SpatialIndex, TriangleMesh
from woundbench.kernels import BACKENDS
from woundbench.mesh_io import CameraView
from woundbench.projection import rasterize
from woundbench.synthfix import icosphere, look_at


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--level", type=int, default=5, help="icosphere subdivision level")
    ap.add_argument("--queries", type=int, default=20000)
    ap.add_argument("--resolution", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    base = icosphere(args.level, 20.0)
    rng = np.random.default_rng(0)
    mesh = TriangleMesh(base.vertices * (1 + 0.05 * rng.uniform(-1, 1, (base.n_vertices, 1))), base.faces)
    q = rng.uniform(-30, 30, size=(args.queries, 3))
    center = np.array([35.0, -40.0, 45.0])
    R = look_at(center, np.zeros(3), [0, 0, 1])
    n = args.resolution
    cam = CameraView("bench", n, n, 1.2 * n, 1.2 * n, n / 2, n / 2, R, -R @ center)

    print(f"mesh: {mesh.n_faces} faces; {args.queries} queries; {n}x{n} image; best of {args.repeat}")
    rows, ref = [], None
    for name in sorted(BACKENDS):
        t_build, index = best_of(lambda: SpatialIndex(mesh, backend=name), args.repeat)
        t_query, near = best_of(lambda: index.query(q), args.repeat)
        t_rast, buf = best_of(lambda: rasterize(mesh, cam, backend=name), args.repeat)
        if ref is None:
            ref = (near.distances, buf.face_id)
        else:
            assert np.array_equal(ref[0], near.distances), "backends disagree on distances"
            assert np.array_equal(ref[1], buf.face_id), "backends disagree on face ids"
        rows.append((name, t_build, t_query, t_rast))

    print(f"{'backend':<8} {'build s':>9} {'query s':>9} {'raster s':>9}")
    for name, b, qt, r in rows:
        print(f"{name:<8} {b:>9.4f} {qt:>9.4f} {r:>9.4f}")
    if len(rows) == 2:
        c, p = sorted(rows)
        print(f"speedup (python / cython): query {p[2] / c[2]:.1f}x, raster {p[3] / c[3]:.1f}x")


if __name__ == "__main__":
    main()
