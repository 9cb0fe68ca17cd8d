"""Command-line front end: ``woundbench <subcommand> [--flags]``.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import IcpParams, align_pipeline, mean_edge_length, crop_by_labels
from .errors import InputError, NumericalError
from .geometry import SimilarityTransform, rotation_from_axis_angle
from .mesh_io import dumps_json, load_cameras, load_mask, load_mesh, save_mesh, write_json
from .metrics import (
    bahd,
    confusion_colored_mesh,
    dice,
    iou,
    surface_metrics,
    vertex_precision_recall,
)
from .projection import project_masks
from .synthfix import WoundSpec, default_wound, make_fixture

logger = logging.getLogger("woundbench")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_dir(path, pattern: str = "*.pgm") -> str:
    h = hashlib.sha256()
    for p in sorted(Path(path).glob(pattern)):
        h.update(p.name.encode())
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def _input(path, kind: str = "file") -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such {kind}: {path}")
    digest = sha256_dir(p) if kind == "dir" else sha256_file(p)
    return {"path": str(path), "sha256": digest}


def _emit(report: dict, args) -> None:
    text = dumps_json(report)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        write_json(report, args.report)
    else:
        sys.stdout.write(text)
    if getattr(args, "csv", None):
        _append_csv(report, args.csv)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif not isinstance(v, list):
            out[key] = v
    return out


def _append_csv(report: dict, path) -> None:
    row = _flatten({k: report[k] for k in ("command", "parameters", "metrics") if k in report})
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        if new:
            w.writeheader()
        w.writerow(row)


def _base_report(command: str) -> dict:
    return {"tool_version": __version__, "command": command}


# ---------------------------------------------------------------- subcommands


def cmd_gen_fixture(args) -> int:
    wound = default_wound(args.shape, args.size)
    spec = WoundSpec(
        tuple(args.wound_center) if args.wound_center else wound.center,
        args.wound_radius, args.wound_depth,
    )
    t = SimilarityTransform(args.scale, rotation_from_axis_angle(args.rotation_axis, args.rotation_deg),
                            args.translation)
    bundle = make_fixture(
        args.shape, args.level, spec, k_views=args.views, resolution=args.resolution, t=t,
        sigma=args.sigma, seed=args.seed, size=args.size, ring_radius=args.ring_radius,
        elevation=args.elevation, fov_deg=args.fov, out_dir=args.out,
    )
    out = Path(args.out)
    files = sorted(p for p in out.rglob("*") if p.is_file())
    report = _base_report("gen-fixture")
    report["outputs"] = {str(p.relative_to(out)): sha256_file(p) for p in files}
    report["parameters"] = dict(bundle.params, seed=args.seed, true_transform=t.to_dict())
    if args.report:
        _emit(report, args)
    print(f"fixture written to {out} ({bundle.gt_mesh.n_faces} faces, {len(bundle.cams)} views)",
          file=sys.stderr)
    return EXIT_OK


def _icp_params(args) -> IcpParams:
    return IcpParams(max_iterations=args.icp_iters, sample_count=args.icp_samples, seed=args.seed,
                     rejection_multiplier=args.rejection, convergence_tol=args.icp_tol)


def _run_alignment(args):
    inputs = {
        "gt_mesh": _input(args.gt_mesh), "est_mesh": _input(args.est_mesh),
        "gt_cams": _input(args.gt_cams), "est_cams": _input(args.est_cams),
    }
    gt = load_mesh(args.gt_mesh)
    est = load_mesh(args.est_mesh)
    icp = _icp_params(args)
    pair = align_pipeline(gt, est, load_cameras(args.gt_cams), load_cameras(args.est_cams), icp, args.delta)
    params = {"icp": icp.to_dict(), "delta": pair.delta, "seed": args.seed}
    alignment = {
        "coarse": pair.coarse.to_dict(), "fine": pair.fine.to_dict(), "total": pair.total.to_dict(),
        "icp": pair.diagnostics.to_dict(),
    }
    return pair, inputs, params, alignment


def _write_alignment_outputs(pair, alignment, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_mesh(pair.est_aligned, out / "est_aligned.ply")
    save_mesh(pair.est_wound, out / "est_wound.ply")
    save_mesh(pair.gt_wound, out / "gt_wound.ply")
    write_json(alignment, out / "transforms.json")


def cmd_align(args) -> int:
    pair, inputs, params, alignment = _run_alignment(args)
    _write_alignment_outputs(pair, alignment, args.out)
    report = _base_report("align")
    report.update(inputs=inputs, parameters=params, alignment=alignment)
    if args.report:
        _emit(report, args)
    return EXIT_OK


def cmd_eval_3d(args) -> int:
    pair, inputs, params, alignment = _run_alignment(args)
    if args.out:
        _write_alignment_outputs(pair, alignment, args.out)
    m = surface_metrics(pair.gt_wound, pair.est_wound, args.samples, args.seed)
    params["samples"] = args.samples
    report = _base_report("eval-3d")
    report.update(inputs=inputs, parameters=params, alignment=alignment, metrics=m.to_dict())
    report["counts"] = {"gt_wound_faces": pair.gt_wound.n_faces, "est_wound_faces": pair.est_wound.n_faces}
    _emit(report, args)
    return EXIT_OK


def cmd_eval_2d(args) -> int:
    gt_dir, pred_dir = Path(args.gt_masks), Path(args.pred_masks)
    inputs = {"gt_masks": _input(gt_dir, "dir"), "pred_masks": _input(pred_dir, "dir")}
    names = sorted(p.name for p in gt_dir.glob("*.pgm"))
    if not names:
        raise InputError(f"no .pgm masks in {gt_dir}")
    per_view = {}
    for name in names:
        if not (pred_dir / name).exists():
            raise InputError(f"prediction missing for {name}")
        g = load_mask(gt_dir / name)
        p = load_mask(pred_dir / name)
        per_view[Path(name).stem] = {"iou": iou(p, g), "dice": dice(p, g)}
    report = _base_report("eval-2d")
    report.update(inputs=inputs, parameters={}, per_view=per_view)
    report["metrics"] = {
        "iou": float(np.mean([v["iou"] for v in per_view.values()])),
        "dice": float(np.mean([v["dice"] for v in per_view.values()])),
        "views": len(per_view),
    }
    _emit(report, args)
    return EXIT_OK


def cmd_project(args) -> int:
    inputs = {"mesh": _input(args.mesh), "cams": _input(args.cams),
              "masks_dir": _input(args.masks_dir, "dir")}
    mesh = load_mesh(args.mesh)
    cams = load_cameras(args.cams)
    masks = []
    for cam in cams:
        path = Path(args.masks_dir) / f"{cam.name}.pgm"
        if not path.exists():
            raise InputError(f"missing mask {path}")
        masks.append(load_mask(path))
    res = project_masks(mesh, cams, masks, args.theta, args.bias)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_mesh(res.mesh, args.out)
    report = _base_report("project")
    report.update(inputs=inputs, parameters={"theta": args.theta, "bias": res.bias})
    report["metrics"] = {
        "wound_vertices": int(np.count_nonzero(res.mesh.labels)),
        "observed_vertices": int(np.count_nonzero(res.observed)),
        "unobserved": res.unobserved,
        "views": len(cams),
    }
    report["outputs"] = {"mesh": {"path": str(args.out), "sha256": sha256_file(args.out)}}
    if args.report:
        _emit(report, args)
    return EXIT_OK


def cmd_eval_seg3d(args) -> int:
    inputs = {"gt_mesh": _input(args.gt_mesh), "pred_mesh": _input(args.pred_mesh)}
    gt = load_mesh(args.gt_mesh)
    pred = load_mesh(args.pred_mesh)
    if gt.labels is None or pred.labels is None:
        raise InputError("both meshes must carry a per-vertex 'label' property")
    tau = args.tau
    if tau is None:
        same = gt.vertices.shape == pred.vertices.shape and np.array_equal(gt.vertices, pred.vertices)
        tau = 0.0 if same else float(np.median(crop_by_labels(gt).edge_lengths()))
    counts = vertex_precision_recall(gt, pred, tau)
    g_pts = gt.vertices[gt.labels == 1]
    s_pts = pred.vertices[pred.labels == 1]
    report = _base_report("eval-seg3d")
    report.update(inputs=inputs, parameters={"tau": tau})
    metrics = counts.to_dict()
    metrics["bahd"] = bahd(g_pts, s_pts) if len(s_pts) else None
    report["metrics"] = metrics
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        save_mesh(confusion_colored_mesh(gt, pred, tau), args.out)
        report["outputs"] = {"colored_mesh": {"path": str(args.out), "sha256": sha256_file(args.out)}}
    _emit(report, args)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="woundbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"woundbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, samples=False, csv_out=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--report", help="write the JSON report here (default: stdout)")
        if samples:
            sp.add_argument("--samples", type=int, default=100_000)
        if csv_out:
            sp.add_argument("--csv", help="append one summary row to this CSV file")

    g = sub.add_parser("gen-fixture", help="generate a synthetic wound fixture directory")
    common(g)
    g.add_argument("--out", required=True)
    g.add_argument("--shape", choices=("sphere", "cylinder"), default="sphere")
    g.add_argument("--level", type=int, default=4)
    g.add_argument("--size", type=float, default=50.0, help="body-part radius (mm)")
    g.add_argument("--wound-center", type=float, nargs=3)
    g.add_argument("--wound-radius", type=float, default=15.0)
    g.add_argument("--wound-depth", type=float, default=5.0)
    g.add_argument("--views", type=int, default=12)
    g.add_argument("--resolution", type=int, default=512)
    g.add_argument("--fov", type=float, default=40.0)
    g.add_argument("--ring-radius", type=float)
    g.add_argument("--elevation", type=float, default=60.0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--rotation-deg", type=float, default=0.0)
    g.add_argument("--rotation-axis", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    g.add_argument("--translation", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    g.add_argument("--sigma", type=float, default=0.0)
    g.set_defaults(func=cmd_gen_fixture)

    def align_flags(sp):
        for flag in ("--gt-mesh", "--est-mesh", "--gt-cams", "--est-cams"):
            sp.add_argument(flag, required=True)
        sp.add_argument("--delta", type=float, help="crop distance (mm); default 2x mean GT wound edge")
        sp.add_argument("--icp-iters", type=int, default=50)
        sp.add_argument("--icp-samples", type=int, default=20000)
        sp.add_argument("--icp-tol", type=float, default=1e-6)
        sp.add_argument("--rejection", type=float, default=3.0,
                        help="reject correspondences beyond this multiple of the median distance")

    a = sub.add_parser("align", help="align an estimated mesh to ground truth")
    common(a)
    align_flags(a)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_align)

    e = sub.add_parser("eval-3d", help="align and compute ASD / HD90 / NC on the wound")
    common(e, samples=True, csv_out=True)
    align_flags(e)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_3d)

    e2 = sub.add_parser("eval-2d", help="per-view IoU / Dice between mask directories")
    common(e2, csv_out=True)
    e2.add_argument("--gt-masks", required=True)
    e2.add_argument("--pred-masks", required=True)
    e2.set_defaults(func=cmd_eval_2d)

    pr = sub.add_parser("project", help="project multi-view masks onto mesh vertices")
    common(pr)
    pr.add_argument("--mesh", required=True)
    pr.add_argument("--cams", required=True)
    pr.add_argument("--masks-dir", required=True)
    pr.add_argument("--theta", type=float, default=0.5)
    pr.add_argument("--bias", type=float)
    pr.add_argument("--out", required=True, help="labeled PLY output path")
    pr.set_defaults(func=cmd_project)

    s3 = sub.add_parser("eval-seg3d", help="BAHD and vertex precision/recall of a 3D segmentation")
    common(s3, csv_out=True)
    s3.add_argument("--gt-mesh", required=True)
    s3.add_argument("--pred-mesh", required=True)
    s3.add_argument("--tau", type=float)
    s3.add_argument("--out", help="confusion-colored PLY output path")
    s3.set_defaults(func=cmd_eval_seg3d)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"woundbench: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError, KeyError, ValueError) as exc:
        print(f"woundbench: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
