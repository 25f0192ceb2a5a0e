"""Geometry of unitary frames: Sym-Bobenko immersion, normal, metric, Hopf differential, rigid motions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .frame import CoverPoint, z_pow_A_samples
from .iwasawa import iwasawa_samples
from .loopalg import (
    I2, SIGMA3, CircleGrid, LoopMatrix, deriv_at_one, inv2, is_su2, opnorm2, dag,
    r3_from_su2_unchecked, su2_from_r3, su2_projection,
)
from .potential import DelaunayResidue

log = logging.getLogger(__name__)

SYM_TOL = 1e-9


def _samples(F):
    return F.samples if isinstance(F, LoopMatrix) else np.asarray(F, dtype=complex)


def sym_bobenko(F, return_residual=False):
    """``f = i dF/dlam(1) F(1)^{-1}`` as R^3 coordinates; accepts batches ``(..., L, 2, 2)``."""
    S = _samples(F)
    X = 1j * deriv_at_one(S) @ inv2(S[..., 0, :, :])
    Y, resid = su2_projection(X)
    worst = float(np.max(resid, initial=0.0))
    if worst > SYM_TOL * max(1.0, float(np.max(np.abs(X), initial=0.0))):
        log.warning("Sym-Bobenko output off su(2) by %.2e (projected)", worst)
    f = r3_from_su2_unchecked(Y)
    return (f, resid) if return_residual else f


def normal_map(F):
    """``N = (-i/2) F(1) sigma_3 F(1)^{-1}`` as R^3 coordinates."""
    S = _samples(F)
    F1 = S[..., 0, :, :]
    Y, _ = su2_projection(-0.5j * F1 @ SIGMA3 @ inv2(F1))
    return r3_from_su2_unchecked(Y)


def surface_invariants(rho, xi_m1_12, xi_0_21):
    """``(metric density 2 rho^2 |xi_{-1}^{12}|, Hopf coefficient -2 xi_{-1}^{12} xi_0^{21})``.

    ``rho`` may be given as a positive factor ``B`` (LoopMatrix), in which case its
    value ``B(0)_{11}`` is used.
    """
    if isinstance(rho, LoopMatrix):
        rho = rho.coeff(0)[0, 0]
    rho = np.asarray(rho)
    if np.any(np.abs(np.imag(rho)) > 1e-9) or np.any(np.real(rho) <= 0):
        raise DomainError("rho = B(z, 0)_11 must be real positive (Iwasawa normalization broken)")
    rho = np.real(rho)
    return 2 * rho ** 2 * np.abs(xi_m1_12), -2 * np.asarray(xi_m1_12) * np.asarray(xi_0_21)


@dataclass
class SurfaceSample:
    z: CoverPoint
    f: np.ndarray
    N: np.ndarray
    metric_density: float
    hopf: complex


@dataclass
class SurfaceBatch:
    """Vectorized samples: ``f, N`` of shape ``(..., 3)``, ``rho`` of shape ``(...)``."""
    f: np.ndarray
    N: np.ndarray
    rho: np.ndarray
    diag: dict


def surface_from_frames(Phi, nblocks=None) -> SurfaceBatch:
    """Iwasawa + Sym-Bobenko + normal for holomorphic frame samples ``(..., L, 2, 2)``."""
    F, B, b0, diag = iwasawa_samples(Phi, nblocks=nblocks)
    f = sym_bobenko(F)
    N = normal_map(F)
    return SurfaceBatch(f, N, np.real(b0[..., 0, 0]), diag)


class RigidMotion:
    """Action of a z-independent ``H`` in Lambda SU(2): ``X -> H(1) X H(1)^{-1} + i dH/dlam(1) H(1)^{-1}``."""

    def __init__(self, H, tol=1e-9):
        S = _samples(H)
        if not is_su2(S, tol):
            raise DomainError("rigid motion needs H(lam) in SU(2) on the circle")
        self.H = S
        self.H1 = S[0]
        self.translation = sym_bobenko(S)

    def rotate(self, v):
        X = su2_from_r3(v)
        return r3_from_su2_unchecked(self.H1 @ X @ inv2(self.H1))

    def apply(self, p, v=None):
        """Image of the point ``p`` (and of the tangent vector ``v`` at it)."""
        q = self.rotate(p) + self.translation
        return (q, None) if v is None else (q, self.rotate(v))

    @property
    def matrix(self):
        return np.stack([self.rotate(e) for e in np.eye(3)], axis=-1)


def rigid_motion_apply(H, p, v=None):
    return RigidMotion(H).apply(p, v)


def delaunay_model_immersion(M, res: DelaunayResidue, zc: CoverPoint, grid: CircleGrid) -> SurfaceSample:
    """Pipeline ``M z^A -> Uni -> Sym`` for the Delaunay model frame."""
    A = res.A_samples(grid.lam)
    Phi = z_pow_A_samples(A, zc.log)
    if M is not None:
        Phi = _samples(M) @ Phi
    sb = surface_from_frames(Phi)
    z = zc.z
    metric, hopf = surface_invariants(sb.rho, res.r / z, res.s / z)
    return SurfaceSample(zc, sb.f, sb.N, float(metric), complex(hopf))


def delaunay_axis(res: DelaunayResidue):
    """Axis ``{(x, 0, -2r)}`` of the model surface with ``M = I``: (point, direction)."""
    return np.array([0.0, 0.0, -2 * res.r]), np.array([1.0, 0.0, 0.0])


def axis_limit(branch: str, Q=None):
    """Oriented limit axis: spherical ``(-e3, -e1)``, catenoidal ``(0, -e1)``; with ``Q`` the image of ``(0, e3)``."""
    if Q is not None:
        p, v = RigidMotion(Q).apply(np.zeros(3), np.array([0.0, 0.0, 1.0]))
        return p, v
    if branch == "spherical":
        return np.array([0.0, 0.0, -1.0]), np.array([-1.0, 0.0, 0.0])
    if branch == "catenoidal":
        return np.zeros(3), np.array([-1.0, 0.0, 0.0])
    raise DomainError(f"unknown branch {branch!r}")


def distance_to_line(x, point, direction):
    d = np.asarray(direction, float) / np.linalg.norm(direction)
    v = np.asarray(x) - point
    return np.linalg.norm(v - (v @ d)[..., None] * d, axis=-1)
