"""Solution container, CSV tables and legacy ASCII VTK output.

Binary solution layout (all little-endian)::

    b"CSTO"                  magic
    uint32                   format version
    uint32                   mesh dimension D
    uint64                   vertex count N
    uint32 * D               divisions
    float64 * N  (x3)        y, p, u
    uint32                   footer length L
    L bytes                  UTF-8 JSON footer

The footer holds the config echo, solver statistics and ``checksum``, the
CRC-32 of every byte before the footer length field.
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "SolutionData",
    "CorruptSolutionError",
    "write_solution",
    "read_solution",
    "write_csv",
    "write_vtk_mesh",
    "write_vtk_structured_points",
    "atomic_open",
]

MAGIC = b"CSTO"
FORMAT_VERSION = 1


class CorruptSolutionError(ValueError):
    pass


@dataclass
class SolutionData:
    D: int
    divisions: tuple
    y: np.ndarray
    p: np.ndarray
    u: np.ndarray
    footer: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.y)

    def field(self, name: str) -> np.ndarray:
        if name not in ("y", "p", "u"):
            raise ValueError(f"field must be y, p or u, got {name!r}")
        return getattr(self, name)


@contextmanager
def atomic_open(path, mode="w", **kwargs):
    """Write to a temporary file next to ``path`` and rename it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _payload(D, divisions, y, p, u):
    n = len(y)
    if not (len(p) == len(u) == n):
        raise ValueError("y, p and u must have the same length")
    if len(divisions) != D:
        raise ValueError("need one division count per axis")
    head = MAGIC + struct.pack("<IIQ", FORMAT_VERSION, D, n) + struct.pack(f"<{D}I", *divisions)
    arrays = b"".join(np.asarray(a, dtype="<f8").tobytes() for a in (y, p, u))
    return head + arrays


def write_solution(path, data: SolutionData) -> None:
    payload = _payload(data.D, data.divisions, data.y, data.p, data.u)
    footer = dict(data.footer)
    footer["checksum"] = zlib.crc32(payload)
    blob = json.dumps(footer, sort_keys=True).encode("utf-8")
    with atomic_open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def read_solution(path) -> SolutionData:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CorruptSolutionError("not a solution file (bad magic)")
    try:
        version, D, n = struct.unpack_from("<IIQ", raw, 4)
        if version != FORMAT_VERSION:
            raise CorruptSolutionError(f"unsupported format version {version}")
        offset = 4 + struct.calcsize("<IIQ")
        divisions = struct.unpack_from(f"<{D}I", raw, offset)
        offset += 4 * D
        arrays = []
        for _ in range(3):
            arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(float))
            offset += 8 * n
        payload = raw[:offset]
        (length,) = struct.unpack_from("<I", raw, offset)
        footer = json.loads(raw[offset + 4: offset + 4 + length].decode("utf-8"))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CorruptSolutionError):
            raise
        raise CorruptSolutionError(f"truncated or malformed solution file: {exc}") from exc
    if footer.get("checksum") != zlib.crc32(payload):
        raise CorruptSolutionError("checksum mismatch")
    return SolutionData(D, tuple(divisions), *arrays, footer=footer)


def write_csv(path, header, rows) -> None:
    with atomic_open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


_VTK_CELL_TYPES = {2: 5, 3: 10}


def write_vtk_mesh(path, mesh, point_data=None, title="space-time mesh") -> None:
    """Legacy ASCII unstructured grid; only for meshes of dimension 2 or 3."""
    D = mesh.dim
    if D not in _VTK_CELL_TYPES:
        raise ValueError(f"VTK mesh export supports D = 2 or 3, got D = {D}")
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, :D] = mesh.vertices
    with atomic_open(path, "w", newline="\n") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        ne = mesh.n_elements
        fh.write(f"CELLS {ne} {ne * (D + 2)}\n")
        cells = np.hstack([np.full((ne, 1), D + 1), mesh.elements])
        np.savetxt(fh, cells, fmt="%d")
        fh.write(f"CELL_TYPES {ne}\n")
        np.savetxt(fh, np.full(ne, _VTK_CELL_TYPES[D]), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, values in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, np.asarray(values, dtype=float), fmt="%.17g")


def write_vtk_structured_points(path, values, origin, spacing, name="value",
                                title="time slice") -> None:
    """Legacy ASCII structured points for a 2d or 3d raster indexed ``[i, j(, k)]``."""
    values = np.asarray(values, dtype=float)
    if values.ndim not in (2, 3):
        raise ValueError("structured points need a 2d or 3d raster")
    dims = list(values.shape) + [1] * (3 - values.ndim)
    origin = list(origin) + [0.0] * (3 - len(origin))
    spacing = list(spacing) + [1.0] * (3 - len(spacing))
    with atomic_open(path, "w", newline="\n") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS {} {} {}\n".format(*dims))
        fh.write("ORIGIN {!r} {!r} {!r}\n".format(*map(float, origin)))
        fh.write("SPACING {!r} {!r} {!r}\n".format(*map(float, spacing)))
        fh.write(f"POINT_DATA {values.size}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        # VTK expects x varying fastest
        np.savetxt(fh, values.ravel(order="F"), fmt="%.17g")
