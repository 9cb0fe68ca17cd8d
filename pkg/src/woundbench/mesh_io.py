"""Readers and writers for meshes (PLY, OBJ), camera rigs (JSON) and
binary masks (PGM).

Camera convention: world-to-camera ``x_cam = R @ x_world + t``, the camera
looks down +z, and a camera point (X, Y, Z) lands on pixel coordinates
``u = fx*X/Z + cx``, ``v = fy*Y/Z + cy``. Integer pixel (col, row) covers
``[col, col+1) x [row, row+1)`` and is sampled at its center.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, MeshFormatError
from .geometry import TriangleMesh

# ---------------------------------------------------------------- helpers


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def dumps_json(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(o[k], level + 1)}" for k in sorted(o)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            if len(o) == 0:
                return "[]"
            if all(isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)
                   for x in o):
                return "[" + ", ".join(enc(x, level + 1) for x in o) + "]"
            return "[\n" + ",\n".join(pad + enc(x, level + 1) for x in o) + "\n" + end + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt_float(float(o))
        if o is None:
            return "null"
        if isinstance(o, (str, Path)):
            return json.dumps(str(o))
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def write_json(obj, path) -> None:
    _atomic_write(path, dumps_json(obj).encode("utf-8"))


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, (count_dtype, item_dtype))


def _parse_ply_header(fh):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MeshFormatError("unsupported format")
    fmt = None
    elements: list[_Element] = []
    while True:
        line = fh.readline()
        if not line:
            raise MeshFormatError("unexpected EOF")
        parts = line.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            fmt = parts[1]
        elif key == "element":
            elements.append(_Element(parts[1], int(parts[2])))
        elif key == "property":
            if not elements:
                raise MeshFormatError("unsupported format")
            try:
                if parts[1] == "list":
                    elements[-1].props.append((parts[4], (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
            except (KeyError, IndexError):
                raise MeshFormatError("unsupported format") from None
        elif key == "end_header":
            break
        else:
            raise MeshFormatError("unsupported format")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshFormatError("unsupported format")
    return fmt, elements


def _read_binary_element(buf: memoryview, pos: int, el: _Element):
    if all(not isinstance(t, tuple) for _, t in el.props):
        dt = np.dtype([(n, "<" + t) for n, t in el.props])
        nbytes = dt.itemsize * el.count
        if pos + nbytes > len(buf):
            raise MeshFormatError("unexpected EOF")
        arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt, count=el.count)
        return {n: arr[n] for n, _ in el.props}, pos + nbytes
    # elements with list properties
    # fast path: a single "list uchar int" with all lists of length 3
    if len(el.props) == 1:
        name, (ct, it) = el.props[0]
        cdt, idt = np.dtype("<" + ct), np.dtype("<" + it)
        rec = np.dtype([("n", cdt), ("v", idt, (3,))])
        nbytes = rec.itemsize * el.count
        if pos + nbytes <= len(buf):
            arr = np.frombuffer(buf[pos:pos + nbytes], dtype=rec, count=el.count)
            if el.count == 0 or np.all(arr["n"] == 3):
                return {name: [row for row in arr["v"]]}, pos + nbytes
    out = {n: [] for n, _ in el.props}
    for _ in range(el.count):
        for n, t in el.props:
            if isinstance(t, tuple):
                cdt, idt = np.dtype("<" + t[0]), np.dtype("<" + t[1])
                if pos + cdt.itemsize > len(buf):
                    raise MeshFormatError("unexpected EOF")
                k = int(np.frombuffer(buf[pos:pos + cdt.itemsize], dtype=cdt)[0])
                pos += cdt.itemsize
                if pos + k * idt.itemsize > len(buf):
                    raise MeshFormatError("unexpected EOF")
                out[n].append(np.frombuffer(buf[pos:pos + k * idt.itemsize], dtype=idt, count=k))
                pos += k * idt.itemsize
            else:
                dt = np.dtype("<" + t)
                if pos + dt.itemsize > len(buf):
                    raise MeshFormatError("unexpected EOF")
                out[n].append(np.frombuffer(buf[pos:pos + dt.itemsize], dtype=dt)[0])
                pos += dt.itemsize
    return out, pos


def _read_ascii_element(lines, el: _Element):
    out = {n: [] for n, _ in el.props}
    for _ in range(el.count):
        try:
            toks = next(lines).split()
        except StopIteration:
            raise MeshFormatError("unexpected EOF") from None
        i = 0
        try:
            for n, t in el.props:
                if isinstance(t, tuple):
                    k = int(toks[i])
                    vals = toks[i + 1:i + 1 + k]
                    if len(vals) != k:
                        raise MeshFormatError("unexpected EOF")
                    out[n].append(np.array([int(x) for x in vals], dtype=np.int64))
                    i += 1 + k
                else:
                    out[n].append(float(toks[i]) if t[0] == "f" else int(toks[i]))
                    i += 1
        except IndexError:
            raise MeshFormatError("unexpected EOF") from None
    return out


def _triangulate(polys) -> np.ndarray:
    tris = []
    for p in polys:
        p = [int(x) for x in p]
        if len(p) < 3:
            raise MeshFormatError("malformed face")
        for k in range(1, len(p) - 1):
            tris.append((p[0], p[k], p[k + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _load_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        body = fh.read()
    data = {}
    if fmt == "ascii":
        lines = iter([ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()])
        for el in elements:
            data[el.name] = _read_ascii_element(lines, el)
    else:
        buf = memoryview(body)
        pos = 0
        for el in elements:
            data[el.name], pos = _read_binary_element(buf, pos, el)
    if "vertex" not in data:
        raise MeshFormatError("unsupported format")
    vd = data["vertex"]
    try:
        verts = np.column_stack([np.asarray(vd[k], dtype=np.float64) for k in ("x", "y", "z")])
    except KeyError:
        raise MeshFormatError("unsupported format") from None
    verts = verts.reshape(-1, 3)
    labels = np.asarray(vd["label"], dtype=np.uint8) if "label" in vd else None
    colors = None
    if all(k in vd for k in ("red", "green", "blue")):
        colors = np.column_stack([np.asarray(vd[k], dtype=np.uint8) for k in ("red", "green", "blue")])
    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in data:
        fd = data["face"]
        key = "vertex_indices" if "vertex_indices" in fd else "vertex_index" if "vertex_index" in fd else None
        if key is None:
            raise MeshFormatError("unsupported format")
        faces = _triangulate(fd[key])
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise MeshFormatError("malformed face")
    return TriangleMesh(verts, faces, labels, colors)


def _ply_header(mesh: TriangleMesh, fmt: str) -> bytes:
    lines = ["ply", f"format {fmt} 1.0", "comment woundbench",
             f"element vertex {mesh.n_vertices}",
             "property double x", "property double y", "property double z"]
    if mesh.labels is not None:
        lines.append("property uchar label")
    if mesh.colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    return ("\n".join(lines) + "\n").encode("ascii")


def _save_ply(mesh: TriangleMesh, path, binary: bool) -> None:
    head = _ply_header(mesh, "binary_little_endian" if binary else "ascii")
    if binary:
        fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if mesh.labels is not None:
            fields.append(("label", "u1"))
        if mesh.colors is not None:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        vrec = np.zeros(mesh.n_vertices, dtype=np.dtype(fields))
        for i, k in enumerate("xyz"):
            vrec[k] = mesh.vertices[:, i]
        if mesh.labels is not None:
            vrec["label"] = mesh.labels
        if mesh.colors is not None:
            for i, k in enumerate(("red", "green", "blue")):
                vrec[k] = mesh.colors[:, i]
        frec = np.zeros(mesh.n_faces, dtype=np.dtype([("n", "u1"), ("v", "<i4", (3,))]))
        frec["n"] = 3
        frec["v"] = mesh.faces
        data = head + vrec.tobytes() + frec.tobytes()
    else:
        out = []
        for i in range(mesh.n_vertices):
            row = [repr(float(x)) for x in mesh.vertices[i]]
            if mesh.labels is not None:
                row.append(str(int(mesh.labels[i])))
            if mesh.colors is not None:
                row += [str(int(c)) for c in mesh.colors[i]]
            out.append(" ".join(row))
        out += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
        data = head + ("\n".join(out) + "\n").encode("ascii")
    _atomic_write(path, data)


# ---------------------------------------------------------------- OBJ


def _load_obj(path) -> TriangleMesh:
    verts, polys = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshFormatError("unexpected EOF")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    # negative indices are relative to the vertices read so far
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                polys.append(idx)
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = _triangulate(polys)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise MeshFormatError("malformed face")
    return TriangleMesh(v, f)


# ---------------------------------------------------------------- public mesh API


def load_mesh(path) -> TriangleMesh:
    """Load a PLY (ASCII or binary little-endian) or OBJ mesh."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:3] == b"ply":
        return _load_ply(path)
    if path.suffix.lower() == ".obj":
        return _load_obj(path)
    raise MeshFormatError("unsupported format")


def save_mesh(mesh: TriangleMesh, path, format: str = "ply_binary") -> None:
    """Write ``mesh`` as ``ply_binary`` (default) or ``ply_ascii``."""
    if format == "ply_binary":
        _save_ply(mesh, path, binary=True)
    elif format == "ply_ascii":
        _save_ply(mesh, path, binary=False)
    else:
        raise InputError(f"unsupported output format {format!r}")


# ---------------------------------------------------------------- cameras


@dataclass(frozen=True, eq=False)
class CameraView:
    """Distortion-free pinhole camera with a world-to-camera pose."""

    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        for k in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, k, float(getattr(self, k)))
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"camera {self.name}: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(f"camera {self.name}: principal point outside image")
        if not (np.allclose(r.T @ r, np.eye(3), atol=1e-6, rtol=0) and abs(np.linalg.det(r) - 1) <= 1e-6):
            raise InputError("invalid rotation")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates, ``-R^T t``."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "name": self.name, "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }


_CAMERA_KEYS = ("name", "width", "height", "fx", "fy", "cx", "cy", "rotation", "translation")


def load_cameras(path) -> list[CameraView]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"invalid camera JSON: {exc}") from None
    if not isinstance(doc, dict) or "views" not in doc:
        raise MeshFormatError("missing key views")
    views = []
    for i, d in enumerate(doc["views"]):
        for k in _CAMERA_KEYS:
            if k not in d:
                raise MeshFormatError(f"missing key {k} in view {i}")
        if len(d["rotation"]) != 9 or len(d["translation"]) != 3:
            raise MeshFormatError(f"bad rotation/translation length in view {i}")
        views.append(CameraView(
            name=str(d["name"]), width=int(d["width"]), height=int(d["height"]),
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.array(d["translation"], dtype=np.float64),
        ))
    return views


def save_cameras(views: Sequence[CameraView], path) -> None:
    write_json({"views": [v.to_dict() for v in views]}, path)


# ---------------------------------------------------------------- masks


@dataclass(frozen=True, eq=False)
class BinaryMask2D:
    """Row-major wound/background raster; ``pixels`` is a (height, width) bool array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=bool)
        if p.ndim != 2:
            raise InputError("mask must be two-dimensional")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def count(self) -> int:
        return int(self.pixels.sum())


def _pgm_tokens(data: bytes, n: int):
    toks, pos = [], 0
    while len(toks) < n:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MeshFormatError("unexpected EOF")
        toks.append(data[start:pos])
    return toks, pos + 1  # single whitespace byte precedes the raster


def load_mask(path) -> BinaryMask2D:
    """Read a binary PGM (P5); values above 127 are wound."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise MeshFormatError("unsupported mask format")
    toks, pos = _pgm_tokens(data, 4)
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    if maxval > 255:
        raise MeshFormatError("unsupported mask format")
    raster = data[pos:pos + w * h]
    if len(raster) < w * h:
        raise MeshFormatError("unexpected EOF")
    px = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return BinaryMask2D(px > 127)


def save_mask(mask: BinaryMask2D, path) -> None:
    head = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    _atomic_write(path, head + (mask.pixels.astype(np.uint8) * 255).tobytes())
