"""ASCII XYZ and PLY point cloud readers, XYZ writer."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .cloud import PointCloud

_PLY_SCALARS = {
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64",
}


class CloudFormatError(ValueError):
    pass


def read_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 'x y z'")
            try:
                rows.append([float(v) for v in parts[:3]])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: non-numeric coordinate") from None
    if not rows:
        raise CloudFormatError(f"{path}: no points")
    return PointCloud(np.array(rows))


def read_ply(path) -> PointCloud:
    """ASCII PLY; only the x, y, z properties of ``vertex`` are kept."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}: missing 'ply' header")
    elements: list[tuple[str, int, list[tuple[str, bool]]]] = []
    body = None
    for i, raw in enumerate(lines[1:], 1):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise CloudFormatError(f"{path}: only ASCII PLY is supported, got {tok[1]}")
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise CloudFormatError(f"{path}: property before element")
            is_list = tok[1] == "list"
            elements[-1][2].append((tok[-1], is_list))
        elif tok[0] == "end_header":
            body = i + 1
            break
    if body is None:
        raise CloudFormatError(f"{path}: missing end_header")

    data = [ln.split() for ln in lines[body:] if ln.strip()]
    pos = 0
    points = None
    for name, count, props in elements:
        rows = data[pos:pos + count]
        if len(rows) < count:
            raise CloudFormatError(f"{path}: truncated '{name}' element")
        pos += count
        if name != "vertex":
            continue
        if any(is_list for _, is_list in props):
            raise CloudFormatError(f"{path}: list properties on vertex are not supported")
        names = [p for p, _ in props]
        try:
            cols = [names.index(axis) for axis in ("x", "y", "z")]
        except ValueError:
            raise CloudFormatError(f"{path}: vertex element lacks x/y/z") from None
        try:
            points = np.array([[float(r[c]) for c in cols] for r in rows])
        except (ValueError, IndexError):
            raise CloudFormatError(f"{path}: malformed vertex row") from None
    if points is None or len(points) == 0:
        raise CloudFormatError(f"{path}: no vertices")
    return PointCloud(points)


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


def write_xyz(points, path) -> None:
    """One 'x y z' line per point at full double precision."""
    pts = points.denormalized() if isinstance(points, PointCloud) else np.asarray(points)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for x, y, z in pts:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
    os.replace(tmp, path)
