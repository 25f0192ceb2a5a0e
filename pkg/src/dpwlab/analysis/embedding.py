"""Embeddedness of a perturbed end: a numerical version of the tubular-neighbourhood argument.

The perturbed annulus is tested as a graph over the Delaunay model:

1. every perturbed vertex lies within ``r_n / 2`` of its model vertex;
2. normals at the nearest model vertex and at the perturbed vertex agree (``<N_phi, N> > 0.1``);
3. the part of the model inside ``|w| < eps'`` stays more than ``2 r_n`` away from the
   outer boundary ring, which fixes ``eps'``;
4. inside ``eps'`` each ring winds once around the model axis and normal segments of
   length ``2 r_n`` through the model cross the perturbed surface exactly once.

A triangle-triangle self-intersection scan of the perturbed mesh inside ``eps'`` runs
alongside as an independent check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DomainError, MeshTooCoarseError
from ..frame import CoverPoint, z_pow_A_samples
from ..loopalg import CircleGrid
from ..potential import DelaunayResidue
from ..surface import surface_from_frames
from .convergence import PerturbedEnd
from .intersect import grid_faces, segment_triangle, self_intersections

log = logging.getLogger(__name__)

NORMAL_THRESHOLD = 0.1
R_FACTOR = {"spherical": 4.0, "catenoidal": 4.0 * 0.9}


@dataclass
class SurfaceMesh:
    """Samples on a polar grid of the w-annulus; rings ordered from the outer radius inwards."""

    radii: np.ndarray                    # (n_r,), decreasing
    thetas: np.ndarray                   # (n_theta,), spanning [0, 2 pi)
    f: np.ndarray                        # (n_r, n_theta, 3)
    N: np.ndarray                        # (n_r, n_theta, 3)

    @property
    def shape(self):
        return self.f.shape[:2]

    @property
    def vertices(self):
        return self.f.reshape(-1, 3)

    @property
    def normals(self):
        return self.N.reshape(-1, 3)

    @property
    def faces(self):
        return grid_faces(*self.shape, closed=True)

    def rings(self, sl):
        return SurfaceMesh(self.radii[sl], self.thetas, self.f[sl], self.N[sl])

    def scaled(self, a):
        return SurfaceMesh(self.radii, self.thetas, a * self.f, self.N)

    def translated(self, v):
        return SurfaceMesh(self.radii, self.thetas, self.f + np.asarray(v), self.N)

    def max_edge(self):
        dr = np.linalg.norm(np.diff(self.f, axis=0), axis=-1)
        dt = np.linalg.norm(self.f - np.roll(self.f, -1, axis=1), axis=-1)
        return float(max(dr.max(initial=0.0), dt.max(initial=0.0)))


def annulus_mesh(eps, z_min, n_r, n_theta):
    """Log-spaced radii from ``eps`` down to ``z_min`` and equispaced angles."""
    if not 0 < z_min < eps:
        raise DomainError("need 0 < z_min < eps")
    radii = np.exp(np.linspace(math.log(eps), math.log(z_min), n_r))
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    return radii, thetas


def _surface(Phi_fn, logw, chunk=4096):
    f = np.empty(logw.shape + (3,))
    N = np.empty(logw.shape + (3,))
    flat = logw.ravel()
    fo, No = f.reshape(-1, 3), N.reshape(-1, 3)
    for s in range(0, flat.size, chunk):
        sb = surface_from_frames(Phi_fn(flat[s:s + chunk]))
        fo[s:s + chunk] = sb.f
        No[s:s + chunk] = sb.N
    return f, N


def model_mesh(res: DelaunayResidue, grid: CircleGrid, radii, thetas, M=None) -> SurfaceMesh:
    A = res.A_samples(grid.lam)
    logw = np.log(radii)[:, None] + 1j * thetas[None, :]

    def fn(lw):
        F = z_pow_A_samples(A, lw)
        return F if M is None else M @ F

    f, N = _surface(fn, logw)
    return SurfaceMesh(np.asarray(radii), np.asarray(thetas), f, N)


def perturbed_mesh(end: PerturbedEnd, radii, thetas, method="series", ode_tol=1e-10) -> SurfaceMesh:
    """Normalized frame ``Phi~ = w^A P(w)`` on the mesh, from the series or by integration."""
    logw = np.log(radii)[:, None] + 1j * thetas[None, :]
    if method == "series":
        f, N = _surface(lambda lw: end.zap.frame_samples(lw, with_M=False), logw)
    elif method == "ode":
        n_r, n_t = logw.shape
        frames = np.empty((n_r, n_t, end.grid.L, 2, 2), dtype=complex)
        start = CoverPoint(float(np.log(radii[0])), 0.0)
        radial = [CoverPoint(float(np.log(r)), 0.0) for r in radii[1:]]
        firsts = [end.zap.frame_samples(start.log, with_M=False)] + end.ode_frames(start, radial, ode_tol)
        for i, r in enumerate(radii):
            wc = CoverPoint(float(np.log(r)), 0.0)
            ring = [CoverPoint(wc.log_abs, float(th)) for th in thetas[1:]]
            frames[i, 0] = firsts[i]
            if ring:
                frames[i, 1:] = np.stack(end.ode_frames(wc, ring, ode_tol, Phit_start=firsts[i]))
        f = np.empty((n_r, n_t, 3))
        N = np.empty((n_r, n_t, 3))
        for i in range(n_r):
            sb = surface_from_frames(frames[i])
            f[i], N[i] = sb.f, sb.N
    else:
        raise DomainError(f"unknown mesh method {method!r}")
    return SurfaceMesh(np.asarray(radii), np.asarray(thetas), f, N)


# ---------------------------------------------------------------------------
# claims

@dataclass
class EmbeddingReport:
    epsilon_prime: float | None
    r_n: float
    claims: dict
    passed: bool
    scan: dict
    agree: bool
    separation: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_json(self):
        return {"epsilon_prime": self.epsilon_prime, "r_n": self.r_n, "passed": self.passed,
                "claims": self.claims, "scan": self.scan, "scan_agrees": self.agree,
                "separation": self.separation, "info": self.info}


def fit_axis(model: SurfaceMesh):
    """Axis point and direction from ring centres and ring-plane normals."""
    centres = model.f.mean(axis=1)
    normals = []
    for i in range(model.shape[0]):
        _, _, vt = np.linalg.svd(model.f[i] - centres[i])
        n = vt[-1]
        if normals and n @ normals[0] < 0:
            n = -n
        normals.append(n)
    d = np.mean(normals, axis=0)
    d /= np.linalg.norm(d)
    return centres.mean(axis=0), d


def winding_numbers(sheet: SurfaceMesh, point, direction):
    """Winding number of every ring of ``sheet`` around the oriented line."""
    d = direction / np.linalg.norm(direction)
    e1 = np.cross(d, [1.0, 0, 0] if abs(d[0]) < 0.9 else [0, 1.0, 0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    v = sheet.f - point
    ang = np.arctan2(v @ e2, v @ e1)
    dang = np.diff(np.concatenate([ang, ang[:, :1]], axis=1), axis=1)
    dang = (dang + np.pi) % (2 * np.pi) - np.pi
    return dang.sum(axis=1) / (2 * np.pi)


def sheet_counts(model: SurfaceMesh, sheets: Sequence[SurfaceMesh], r_n, first_band=0):
    """Crossings of the normal segments ``c +- r_n N`` with the perturbed triangles.

    Segments sit at centroids of model faces in bands ``first_band .. n_r - 3`` (the innermost
    band is skipped since the mesh is cut there); every triangle of every sheet is a target.
    Returns ``(band index per segment, crossing count per segment)``.
    """
    n_r, n_t = model.shape
    Fm = model.faces
    band = np.concatenate([np.repeat(np.arange(n_r - 1), n_t)] * 2)
    keep = (band >= first_band) & (band < n_r - 2)
    Fm, band = Fm[keep], band[keep]
    cen = model.vertices[Fm].mean(axis=1)
    nrm = model.normals[Fm].mean(axis=1)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    tris = np.concatenate([s.vertices[s.faces] for s in sheets])
    edge = max(s.max_edge() for s in sheets)
    tree = cKDTree(tris.mean(axis=1))
    # a crossed triangle has its centroid within `edge` of the crossing point, hence within
    # 1.5 edge of one of the probe points spaced `edge` apart along the segment
    m = int(math.ceil(2 * r_n / edge)) + 1
    offs = np.linspace(-r_n, r_n, m)
    ntri = len(tris)
    counts = np.zeros(len(cen), dtype=np.int64)
    step = max(1, 4096 // m)
    for s0 in range(0, len(cen), step):
        c, nv = cen[s0:s0 + step], nrm[s0:s0 + step]
        probes = (c[:, None, :] + offs[None, :, None] * nv[:, None, :]).reshape(-1, 3)
        cand = tree.query_ball_point(probes, 1.5 * edge)
        seg = np.repeat(np.arange(len(probes)) // m, [len(x) for x in cand])
        if not len(seg):
            continue
        tri = np.concatenate([np.asarray(x, dtype=np.int64) for x in cand])
        key = np.unique(seg * ntri + tri)
        seg, tri = key // ntri + s0, key % ntri
        T = tris[tri]
        hit = segment_triangle(cen[seg] - r_n * nrm[seg], cen[seg] + r_n * nrm[seg], T[:, 0], T[:, 1], T[:, 2])
        counts += np.bincount(seg[hit], minlength=len(cen))
    return band, counts


def separation_profile(model: SurfaceMesh):
    """``D_j`` = distance of ring j to the outer ring; ``d_i = min_{j >= i} D_j``."""
    tree = cKDTree(model.f[0])
    D = np.array([tree.query(model.f[j])[0].min() for j in range(model.shape[0])])
    d = np.minimum.accumulate(D[::-1])[::-1]
    return D, d


def _epsilon_prime(radii, d, thresh):
    """Largest radius whose inner disk is separated from the outer ring, log-interpolated.

    Returns ``(eps', i)`` with ``i`` the first ring inside ``eps'``, or ``(None, None)``.
    """
    above = d > thresh
    if not above[-1]:
        return None, None
    i = int(np.argmax(above))          # d is non-decreasing inward
    if i == 0:
        return float(radii[0]), 0
    l0, l1 = math.log(radii[i - 1]), math.log(radii[i])
    frac = (thresh - d[i - 1]) / (d[i] - d[i - 1])
    return float(math.exp(l0 + frac * (l1 - l0))), i


def check_coarseness(mesh: SurfaceMesh, r_n):
    e = mesh.max_edge()
    if e > r_n / 4:
        n_r, n_t = mesh.shape
        fac = math.ceil(e / (r_n / 4) * 1.1)
        raise MeshTooCoarseError(
            f"adjacent samples {e:.4g} apart, above r_n/4 = {r_n / 4:.4g}; refine the mesh "
            f"(e.g. n_r >= {n_r * fac}, n_theta >= {n_t * fac}) or increase z_min")
    return e


def _claim(ok, value, margin, **extra):
    return {"pass": bool(ok), "value": float(value), "margin": float(margin), **extra}


def embeddedness_check(perturbed, model: SurfaceMesh, branch: str, t: float, r_n=None,
                       r_factor=None, scan=True, check_coarse=True, axis=None,
                       eps_inner=None) -> EmbeddingReport:
    """Graph test of the perturbed end over the model, plus the triangle scan.

    ``perturbed`` is one ``SurfaceMesh`` or a list of sheets, each in vertex correspondence
    with ``model`` over ``z_min <= |w| <= eps``.  For the catenoidal branch everything is
    blown up by ``1/t`` first.  Claims 1 and 2 are checked on the whole mesh; the boundary
    separation fixes ``eps'``; the degree claim and the scan concern ``|w| < eps'``.
    A given ``eps_inner`` replaces the scanned ``eps'`` (claim 3 is then tested there).
    """
    sheets = list(perturbed) if isinstance(perturbed, (list, tuple)) else [perturbed]
    if t == 0:
        raise DomainError("embeddedness check needs t != 0")
    factor = r_factor if r_factor is not None else R_FACTOR[branch]
    if branch == "catenoidal":
        sheets = [s.scaled(1 / abs(t)) for s in sheets]
        model = model.scaled(1 / abs(t))
        r_n = r_n or factor
    else:
        r_n = r_n or factor * abs(t)
    for s in sheets:
        if s.shape != model.shape:
            raise DomainError("perturbed sheets must have the model's grid shape")
    n_r = model.shape[0]
    if n_r < 4:
        raise DomainError("need at least 4 rings")
    info = {"branch": branch, "t": t, "shape": list(model.shape), "r_factor": factor}
    if check_coarse:
        info["max_edge"] = max(check_coarseness(s, r_n) for s in sheets + [model])

    # claim 1: projection distance, claim 2: normal alignment (whole mesh)
    err = max(float(np.linalg.norm(s.f - model.f, axis=-1).max()) for s in sheets)
    c1 = _claim(err < r_n / 2, err, r_n / 2 - err)
    tree = cKDTree(model.vertices)
    amin = np.inf
    for s in sheets:
        _, idx = tree.query(s.vertices)
        amin = min(amin, float(np.einsum("ij,ij->i", model.normals[idx], s.normals).min()))
    c2 = _claim(amin > NORMAL_THRESHOLD, amin, amin - NORMAL_THRESHOLD)

    # claim 3: boundary separation, defines eps'
    D, d = separation_profile(model)
    eps_p, i0 = _epsilon_prime(model.radii, d, 2 * r_n)
    if eps_inner is not None:
        inside = np.nonzero(model.radii <= eps_inner)[0]
        if not inside.size:
            raise DomainError(f"eps_inner = {eps_inner} is below the mesh")
        info["eps_prime_scanned"] = eps_p
        i0 = int(inside[0])
        eps_p = float(eps_inner) if d[i0] > 2 * r_n else None
        i0 = i0 if eps_p is not None else None
    sep = {"radii": [float(x) for x in model.radii], "D": [float(x) for x in D],
           "d": [float(x) for x in d], "threshold": 2 * r_n}
    c3 = _claim(eps_p is not None and i0 < n_r - 3, d[-1], (d[i0] if i0 is not None else d[-1]) - 2 * r_n)
    claims = {"projection_distance": c1, "normal_alignment": c2, "boundary_separation": c3}

    # claim 4: degree one inside eps'
    i0 = i0 if i0 is not None else n_r - 3
    point, direction = axis if axis is not None else fit_axis(model)
    winds = np.stack([winding_numbers(s.rings(slice(i0, None)), point, direction) for s in sheets])
    wind_dev = float(np.max(np.abs(np.abs(winds) - 1)))
    band, counts = sheet_counts(model, sheets, r_n, first_band=i0)
    sheets_rng = [int(counts.min()), int(counts.max())] if counts.size else [0, 0]
    ok4 = wind_dev < 1e-6 and sheets_rng == [1, 1]
    claims["degree"] = _claim(ok4, sheets_rng[1], 0.0 if ok4 else -1.0, winding_deviation=wind_dev,
                              sheets=sheets_rng, segments=int(counts.size))
    passed = all(c["pass"] for c in claims.values())
    info["axis_point"] = [float(x) for x in point]
    info["axis_direction"] = [float(x) for x in direction]
    info["inner_ring"] = int(i0)

    # the same tests on smaller inner disks: separation margin and sheet count
    mono = []
    for j in sorted(set(np.linspace(i0, n_r - 3, 5).astype(int).tolist())):
        sel = band >= j
        mono.append({"eps_inner": float(model.radii[j]), "separation_margin": float(d[j] - 2 * r_n),
                     "pass": bool(c1["pass"] and c2["pass"] and d[j] > 2 * r_n
                                  and np.all(counts[sel] == 1) and wind_dev < 1e-6)})
    info["smaller_eps"] = mono

    scan_rep = {"ran": False}
    if scan:
        inner = [s.rings(slice(i0, None)) for s in sheets]
        nv = inner[0].vertices.shape[0]
        V = np.concatenate([s.vertices for s in inner])
        F = np.concatenate([s.faces + k * nv for k, s in enumerate(inner)])
        pairs = self_intersections(V, F)
        scan_rep = {"ran": True, "pairs": int(len(pairs)), "pass": bool(len(pairs) == 0)}
    agree = (not scan) or (scan_rep["pass"] == passed)
    return EmbeddingReport(eps_p, float(r_n), claims, bool(passed), scan_rep, bool(agree), sep, info)
