"""OBJ / CSV / JSON writers with byte-stable formatting."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .analysis.intersect import grid_faces

OBJ_FMT = "{:.9g}"


def _seam_closed(f, tol=1e-12):
    """True if the last column duplicates the first (parameter range spans exactly 2 pi)."""
    if f.shape[1] < 3:
        return False
    scale = max(1.0, float(np.max(np.abs(f))))
    return bool(np.max(np.abs(f[:, -1] - f[:, 0])) <= tol * scale)


def mesh_arrays(f, N=None, closed="auto"):
    """Welded vertices, normals and oriented triangles of a rectangular ``(n_r, n_theta, 3)`` grid.

    ``closed``: True for a periodic theta ring without duplicated seam column, False for an
    open grid, "auto" to drop a duplicated seam column and close the ring.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 3 or f.shape[2] != 3 or f.shape[0] < 2 or f.shape[1] < 2:
        raise ValueError(f"need a rectangular (n_r, n_theta, 3) sample grid, got shape {f.shape}")
    N = None if N is None else np.asarray(N, dtype=float)
    if N is not None and N.shape != f.shape:
        raise ValueError("normals must have the shape of the samples")
    if not np.all(np.isfinite(f)) or (N is not None and not np.all(np.isfinite(N))):
        raise ValueError("NaN or inf in samples")
    if closed == "auto":
        closed = _seam_closed(f)
        if closed:
            f = f[:, :-1]
            N = None if N is None else N[:, :-1]
    closed = bool(closed) and f.shape[1] >= 3
    n_r, n_t = f.shape[:2]
    V = f.reshape(-1, 3)
    F = grid_faces(n_r, n_t, closed=closed)
    if N is not None:
        Nv = N.reshape(-1, 3)
        T = V[F]
        fn = np.cross(T[:, 1] - T[:, 0], T[:, 2] - T[:, 0])
        flip = np.einsum("ij,ij->i", fn, Nv[F].sum(axis=1)) < 0
        F[flip] = F[flip][:, ::-1]
    else:
        Nv = None
    return V, Nv, F


def obj_text(f, N=None, closed="auto"):
    V, Nv, F = mesh_arrays(f, N, closed)
    out = io.StringIO()
    for v in V:
        out.write("v " + " ".join(OBJ_FMT.format(x) for x in v) + "\n")
    if Nv is not None:
        for n in Nv:
            out.write("vn " + " ".join(OBJ_FMT.format(x) for x in n) + "\n")
        for a, b, c in F + 1:
            out.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
    else:
        for a, b, c in F + 1:
            out.write(f"f {a} {b} {c}\n")
    return out.getvalue()


def export_mesh(path, f, N=None, closed="auto"):
    Path(path).write_text(obj_text(f, N, closed))
    return Path(path)


def read_obj(path):
    """Minimal reader for the files written here: (V, Nv or None, F zero-based)."""
    V, Nv, F = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            V.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vn":
            Nv.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            F.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.array(V), (np.array(Nv) if Nv else None), np.array(F, dtype=np.int64)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_jsonable(float(np.real(x))), _jsonable(float(np.imag(x)))]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def json_text(data):
    return json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n"


def export_json(path, data):
    Path(path).write_text(json_text(data))
    return Path(path)


def export_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    Path(path).write_text(buf.getvalue(), newline="")
    return Path(path)


def export_report(path, data, header=None):
    """JSON for dicts; CSV (RFC 4180, header row) when ``header`` is given and ``data`` are rows."""
    if header is not None:
        return export_csv(path, header, data)
    return export_json(path, data)
