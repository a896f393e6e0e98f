"""Minimal PLY reader/writer for point clouds.

Supports ascii and binary_little_endian files. On read, only the x/y/z
vertex properties (float32 or float64) are consumed; any other property is
skipped. On write, only x/y/z are emitted.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import PlyError
from .geometry import PointCloud

_SCALAR_FMT = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


def _parse_header(fh) -> tuple[str, list[tuple[str, int, list]]]:
    """Return (format, elements) where elements = [(name, count, properties)].

    A property is ("scalar", type, name) or ("list", count_type, item_type, name).
    """
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[tuple[str, int, list]] = []
    while True:
        line = fh.readline()
        if not line:
            raise PlyError("unexpected end of header")
        tokens = line.decode("ascii", errors="replace").strip().split()
        if not tokens:
            continue
        kw = tokens[0]
        if kw == "comment" or kw == "obj_info":
            continue
        if kw == "format":
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format {tokens[1]!r}")
            fmt = tokens[1]
        elif kw == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif kw == "property":
            if not elements:
                raise PlyError("property before any element")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                elements[-1][2].append(("scalar", tokens[1], tokens[2]))
        elif kw == "end_header":
            break
        else:
            raise PlyError(f"unrecognized header keyword {kw!r}")
    if fmt is None:
        raise PlyError("header missing format line")
    return fmt, elements


def read_ply(path: str | Path) -> PointCloud:
    """Read vertex x/y/z from an ascii or binary_little_endian PLY file."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise PlyError("no vertex element")
        _, count, props = vertex
        names = [p[-1] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise PlyError(f"vertex element lacks property {axis!r}")

        if fmt == "ascii":
            pts = _read_ascii_vertices(fh, count, props)
        else:
            pts = _read_binary_vertices(fh, count, props)
        # Trailing elements (faces etc.) are ignored entirely.
    return PointCloud(pts)


def _read_ascii_vertices(fh, count: int, props: list) -> np.ndarray:
    names = [p[-1] for p in props]
    cols = {axis: names.index(axis) for axis in ("x", "y", "z")}
    has_list = any(p[0] == "list" for p in props)
    pts = np.empty((count, 3), dtype=np.float64)
    for i in range(count):
        line = fh.readline()
        if not line:
            raise PlyError(f"file truncated at vertex {i}")
        tokens = line.split()
        if has_list:
            # Walk tokens property by property so list lengths are honored.
            values = {}
            pos = 0
            for p in props:
                if p[0] == "scalar":
                    values[p[2]] = tokens[pos]
                    pos += 1
                else:
                    n = int(tokens[pos])
                    pos += 1 + n
            row = [float(values[a]) for a in ("x", "y", "z")]
        else:
            if len(tokens) < len(names):
                raise PlyError(f"vertex {i} has too few values")
            row = [float(tokens[cols[a]]) for a in ("x", "y", "z")]
        pts[i] = row
    return pts


def _read_binary_vertices(fh, count: int, props: list) -> np.ndarray:
    has_list = any(p[0] == "list" for p in props)
    if not has_list:
        fmt = "<" + "".join(_scalar_code(p[1]) for p in props)
        rec = struct.calcsize(fmt)
        raw = fh.read(rec * count)
        if len(raw) < rec * count:
            raise PlyError("file truncated in vertex data")
        names = [p[2] for p in props]
        dtype = np.dtype([(n, "<" + _scalar_code(p[1])) for n, p in zip(names, props)])
        arr = np.frombuffer(raw, dtype=dtype, count=count)
        return np.column_stack([arr["x"], arr["y"], arr["z"]]).astype(np.float64)
    # Rare: per-vertex list properties force record-by-record decoding.
    pts = np.empty((count, 3), dtype=np.float64)
    for i in range(count):
        values = {}
        for p in props:
            if p[0] == "scalar":
                code = _scalar_code(p[1])
                values[p[2]] = struct.unpack("<" + code, fh.read(struct.calcsize(code)))[0]
            else:
                ccode = _scalar_code(p[1])
                n = struct.unpack("<" + ccode, fh.read(struct.calcsize(ccode)))[0]
                icode = _scalar_code(p[2])
                fh.read(struct.calcsize(icode) * n)
        pts[i] = [float(values[a]) for a in ("x", "y", "z")]
    return pts


def _scalar_code(type_name: str) -> str:
    try:
        return _SCALAR_FMT[type_name]
    except KeyError:
        raise PlyError(f"unsupported property type {type_name!r}") from None


def write_ply(path: str | Path, cloud: PointCloud, binary: bool = True) -> None:
    """Write x/y/z as float64; no other properties are emitted."""
    path = Path(path)
    pts = cloud.points
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
        else:
            for p in pts:
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n".encode("ascii"))
