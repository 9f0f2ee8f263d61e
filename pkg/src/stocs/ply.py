"""Minimal PLY reader for vertex positions and optional normals.

Supports ASCII and binary little-endian files. Faces and any other
elements are skipped; only the vertex element is consumed.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .geometry import PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_ply(path) -> PointCloud:
    """Read vertex positions (and normals, if present) from a PLY file."""
    with open(path, "rb") as f:
        data = f.read()

    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append(("list:" + parts[2] + ":" + parts[3], parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))

    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")

    vertex_spec = next((e for e in elements if e[0] == "vertex"), None)
    if vertex_spec is None:
        raise FormatError(f"{path}: no vertex element")

    if fmt == "ascii":
        vertices = _read_ascii_vertices(body, elements, path)
    else:
        vertices = _read_binary_vertices(body, elements, path)

    names = [name for _, name in vertex_spec[2]]
    for coord in ("x", "y", "z"):
        if coord not in names:
            raise FormatError(f"{path}: vertex element lacks {coord}")
    pts = np.column_stack([vertices[c] for c in ("x", "y", "z")]).astype(np.float64)
    normals = None
    if all(n in names for n in ("nx", "ny", "nz")):
        normals = np.column_stack([vertices[c] for c in ("nx", "ny", "nz")]).astype(np.float64)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.maximum(lengths, 1e-12)
    return PointCloud(pts, normals)


def _read_ascii_vertices(body: bytes, elements, path) -> dict[str, np.ndarray]:
    lines = body.decode("ascii", errors="replace").splitlines()
    pos = 0
    for name, count, props in elements:
        if any(t.startswith("list:") for t, _ in props):
            if name == "vertex":
                raise FormatError(f"{path}: list properties on vertices unsupported")
            pos += count
            continue
        if name != "vertex":
            pos += count
            continue
        if pos + count > len(lines):
            raise FormatError(f"{path}: truncated vertex data")
        rows = [lines[pos + i].split() for i in range(count)]
        cols = {}
        for j, (_, pname) in enumerate(props):
            cols[pname] = np.array([float(r[j]) for r in rows])
        return cols
    raise FormatError(f"{path}: vertex element not found in body")


def _read_binary_vertices(body: bytes, elements, path) -> dict[str, np.ndarray]:
    offset = 0
    for name, count, props in elements:
        has_list = any(t.startswith("list:") for t, _ in props)
        if name == "vertex":
            if has_list:
                raise FormatError(f"{path}: list properties on vertices unsupported")
            dtype = np.dtype([(pname, "<" + _PLY_TYPES[t]) for t, pname in props])
            need = dtype.itemsize * count
            if offset + need > len(body):
                raise FormatError(f"{path}: truncated vertex data")
            rec = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
            return {pname: rec[pname] for _, pname in props}
        if has_list:
            # variable-length rows must be walked entry by entry
            for _ in range(count):
                for t, _pname in props:
                    if t.startswith("list:"):
                        _, count_t, item_t = t.split(":")
                        cdt = np.dtype("<" + _PLY_TYPES[count_t])
                        n_items = int(np.frombuffer(body, cdt, 1, offset)[0])
                        offset += cdt.itemsize + n_items * np.dtype("<" + _PLY_TYPES[item_t]).itemsize
                    else:
                        offset += np.dtype("<" + _PLY_TYPES[t]).itemsize
        else:
            row = sum(np.dtype("<" + _PLY_TYPES[t]).itemsize for t, _ in props)
            offset += row * count
    raise FormatError(f"{path}: vertex element not found in body")
