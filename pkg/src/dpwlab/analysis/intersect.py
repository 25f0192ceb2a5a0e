"""Triangle-mesh self-intersection scan and segment/triangle predicates."""

from __future__ import annotations

import numpy as np

EPS = 1e-12


def grid_faces(n_r, n_theta, closed=True, offset=0):
    """Triangles of an ``n_r x n_theta`` vertex grid (ring-major), quads split along one diagonal."""
    i, j = np.meshgrid(np.arange(n_r - 1), np.arange(n_theta if closed else n_theta - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    jn = (j + 1) % n_theta
    a = i * n_theta + j
    b = (i + 1) * n_theta + j
    c = (i + 1) * n_theta + jn
    d = i * n_theta + jn
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return tris + offset


def segment_triangle(P0, P1, A, B, C):
    """Moeller-Trumbore test of segments ``P0 P1`` against triangles ``ABC`` (row-wise, vectorized).

    Returns a boolean array; parallel (coplanar) configurations count as no hit.
    """
    d = P1 - P0
    e1 = B - A
    e2 = C - A
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > EPS * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) * np.linalg.norm(d, axis=1)
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = P0 - A
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    w = np.einsum("ij,ij->i", e2, q) * inv
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (w >= 0) & (w <= 1)


def triangles_intersect(T1, T2):
    """Row-wise test of triangle pairs ``T1``, ``T2`` of shape (n, 3, 3) via edge/triangle tests both ways."""
    hit = np.zeros(len(T1), dtype=bool)
    for X, Y in ((T1, T2), (T2, T1)):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            hit |= segment_triangle(X[:, a], X[:, b], Y[:, 0], Y[:, 1], Y[:, 2])
    return hit


def _candidate_pairs(V, F, cell):
    """Pairs of triangles sharing a cell of a uniform spatial hash (cell = ``cell``)."""
    T = V[F]
    lo = np.floor(T.min(axis=1) / cell).astype(np.int64)
    hi = np.floor(T.max(axis=1) / cell).astype(np.int64)
    span = hi - lo
    if np.any(span > 1):
        raise ValueError("cell size smaller than a triangle's extent")
    keys, owners = [], []
    nt = len(F)
    base = lo - lo.min(axis=0)
    dims = base.max(axis=0) + 3
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                sel = (span[:, 0] >= dx) & (span[:, 1] >= dy) & (span[:, 2] >= dz)
                c = base[sel] + np.array([dx, dy, dz])
                keys.append((c[:, 0] * dims[1] + c[:, 1]) * dims[2] + c[:, 2])
                owners.append(np.nonzero(sel)[0])
    keys = np.concatenate(keys)
    owners = np.concatenate(owners)
    order = np.argsort(keys, kind="stable")
    keys, owners = keys[order], owners[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    ends = np.r_[starts[1:], len(keys)]
    pa, pb = [], []
    for s, e in zip(starts, ends):
        n = e - s
        if n < 2:
            continue
        idx = owners[s:e]
        ii, jj = np.triu_indices(n, 1)
        pa.append(idx[ii])
        pb.append(idx[jj])
    if not pa:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.stack([np.concatenate(pa), np.concatenate(pb)], axis=1)
    pairs.sort(axis=1)
    pairs = np.unique(pairs[:, 0] * nt + pairs[:, 1])
    return np.stack([pairs // nt, pairs % nt], axis=1)


def self_intersections(V, F, cell=None):
    """Intersecting pairs among non-adjacent triangles (no shared vertex).

    Uses a uniform spatial hash with cell size equal to the longest edge.
    """
    V = np.asarray(V, dtype=float)
    F = np.asarray(F, dtype=np.int64)
    if len(F) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    T = V[F]
    if cell is None:
        edges = np.linalg.norm(T - np.roll(T, 1, axis=1), axis=2)
        cell = float(edges.max()) * (1 + 1e-9)
    pairs = _candidate_pairs(V, F, cell)
    if len(pairs) == 0:
        return pairs
    shared = (F[pairs[:, 0]][:, :, None] == F[pairs[:, 1]][:, None, :]).any(axis=(1, 2))
    pairs = pairs[~shared]
    hits = np.zeros(len(pairs), dtype=bool)
    chunk = 200000
    for s in range(0, len(pairs), chunk):
        p = pairs[s:s + chunk]
        hits[s:s + chunk] = triangles_intersect(T[p[:, 0]], T[p[:, 1]])
    return pairs[hits]
