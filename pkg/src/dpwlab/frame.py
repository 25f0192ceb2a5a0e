"""Holomorphic frames: ``z^A``, ODE solutions of ``dPhi = Phi xi``, monodromy and the ``z^A P`` series.

Frames live on the universal cover of the punctured disk; points on it are
``CoverPoint(log_abs, arg)`` with a continuous argument.  Paths are straight
segments in the ``(log|z|, arg)`` plane, which keeps the step size proportional to
``|z|`` automatically: in the variable ``s = log z`` the equation reads
``dPhi/ds = Phi xi(e^s) e^s`` and is regular at the puncture.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, ODEError, ResonanceError
from .loopalg import (
    I2, CircleGrid, LoopMatrix, comm, deriv_at_one, det2, dag, expm_traceless, inv2, opnorm2,
)
from .potential import DelaunayResidue, Potential, SpecPotential, laurent_in_z, mu_squared

log = logging.getLogger(__name__)

ODE_TOL = 1e-10
DET_DRIFT_MAX = 1e-6


@dataclass(frozen=True)
class CoverPoint:
    log_abs: float
    arg: float = 0.0

    @classmethod
    def from_z(cls, z, arg=None):
        z = complex(z)
        if z == 0:
            raise DomainError("z = 0 is not on the punctured disk")
        return cls(math.log(abs(z)), math.atan2(z.imag, z.real) if arg is None else arg)

    @property
    def z(self):
        return complex(np.exp(self.log_abs + 1j * self.arg))

    @property
    def log(self):
        return complex(self.log_abs, self.arg)

    @property
    def abs(self):
        return math.exp(self.log_abs)

    def turned(self, dtheta):
        return CoverPoint(self.log_abs, self.arg + dtheta)


def z_pow_A_samples(A, logz):
    """``z^A = exp(log z A)`` for residue samples ``A`` (L, 2, 2); ``logz`` scalar or array."""
    logz = np.asarray(logz, dtype=complex)
    return expm_traceless(logz[..., None, None, None] * A)


def z_pow_A(res: DelaunayResidue, zc: CoverPoint, grid: CircleGrid) -> LoopMatrix:
    """``cosh(mu log z) I + sinh(mu log z)/mu A`` (``I + log z A`` where ``mu = 0``)."""
    return LoopMatrix(grid, z_pow_A_samples(res.A_samples(grid.lam), zc.log))


def delaunay_monodromy(res: DelaunayResidue, grid: CircleGrid) -> LoopMatrix:
    """``exp(2 pi i A_t) = cos(2 pi mu) I + i sin(2 pi mu)/mu A_t``."""
    return LoopMatrix(grid, expm_traceless(2j * np.pi * res.A_samples(grid.lam)))


# ---------------------------------------------------------------------------
# ODE integration

@dataclass
class FramePath:
    waypoints: list
    frames: list                         # LoopMatrix per waypoint
    ode_tol: float
    det_drift: list = field(default_factory=list)
    nfev: int = 0

    @property
    def end(self) -> LoopMatrix:
        return self.frames[-1]


def _as_samples(Phi, grid):
    if isinstance(Phi, LoopMatrix):
        return Phi.samples
    return np.broadcast_to(np.asarray(Phi, dtype=complex), (grid.L, 2, 2))


def _segment(rhs_mat, y0, s0, s1, ode_tol, method, extra=None):
    """Integrate ``dY/dtau`` from tau = 0 to 1 along ``s = s0 + tau (s1 - s0)``."""
    ds = s1 - s0
    shape = y0.shape

    def f(tau, y):
        z = np.exp(s0 + tau * ds)
        return (rhs_mat(y.reshape(shape), z) * (z * ds)).ravel()

    sol = solve_ivp(f, (0.0, 1.0), y0.ravel(), method=method, rtol=ode_tol, atol=ode_tol)
    if sol.status != 0:
        raise ODEError(f"integration failed between log z = {s0:.4g} and {s1:.4g}: {sol.message}")
    return sol.y[:, -1].reshape(shape), sol.nfev


def _renormalize(Phi):
    d = det2(Phi)
    drift = float(np.max(np.abs(d - 1)))
    if drift > DET_DRIFT_MAX:
        raise ODEError(f"det drift {drift:.2e} exceeds {DET_DRIFT_MAX:.0e} before renormalization")
    return Phi / np.sqrt(d)[..., None, None], drift


def ode_solve_frame(xi: Potential, start: CoverPoint, Phi_start, path: Sequence[CoverPoint],
                    ode_tol=ODE_TOL, method="RK45") -> FramePath:
    """Solve ``dPhi = Phi xi`` from ``start`` through the waypoints of ``path``.

    The L grid values of lambda give L independent 2x2 systems; they are stacked
    into one state so a single adaptive step sequence serves all of them.
    """
    grid = xi.grid
    Phi = np.array(_as_samples(Phi_start, grid), dtype=complex)
    pts = [start] + list(path)
    for p in pts:
        if p.abs >= xi.radius:
            raise DomainError(f"path leaves the domain of the potential (|z| = {p.abs:.4g})")
    frames, drifts, nfev = [], [], 0

    def rhs(Y, z):
        return Y @ xi(z)

    for a, b in zip(pts[:-1], pts[1:]):
        Phi, n = _segment(rhs, Phi, a.log, b.log, ode_tol, method)
        Phi, drift = _renormalize(Phi)
        nfev += n
        drifts.append(drift)
        frames.append(LoopMatrix(grid, Phi))
    if drifts:
        log.debug("ode_solve_frame: %d segments, %d rhs calls, max det drift %.2e",
                  len(drifts), nfev, max(drifts))
    return FramePath(list(path), frames, ode_tol, drifts, nfev)


def radial_path(z_from, z_to, n, arg=0.0):
    """Waypoints equispaced in log|z| from ``|z_from|`` to ``|z_to|`` (excluding the start)."""
    la = np.linspace(math.log(z_from), math.log(z_to), n + 1)[1:]
    return [CoverPoint(float(x), arg) for x in la]


def circle_path(base: CoverPoint, nseg=4, turns=1.0):
    return [base.turned(2 * np.pi * turns * (i + 1) / nseg) for i in range(nseg)]


def monodromy(xi: Potential, base: CoverPoint, Phi_base, ode_tol=ODE_TOL, method="RK45") -> LoopMatrix:
    """``M = Phi(base after one positive turn) Phi_base^{-1}``."""
    grid = xi.grid
    P0 = _as_samples(Phi_base, grid)
    fp = ode_solve_frame(xi, base, P0, circle_path(base), ode_tol, method)
    return LoopMatrix(grid, fp.end.samples @ inv2(P0))


def check_monodromy_problem(M: LoopMatrix, sign=None):
    """Residuals of the three closing conditions: unitarity, ``M(1) = +-I``, ``dM/dlam(1) = 0``."""
    S = M.samples
    unit = float(np.max(opnorm2(S @ dag(S) - I2)))
    M1 = S[0]
    if sign is None:
        sign = 1.0 if np.real(np.trace(M1)) >= 0 else -1.0
    at_one = float(opnorm2(M1 - sign * I2))
    d1 = float(opnorm2(deriv_at_one(S)))
    return {"unitary": unit, "at_one": at_one, "sign": int(sign), "deriv_at_one": d1}


def monodromy_derivative(xi: SpecPotential, base: CoverPoint, Phi_base, ode_tol=ODE_TOL,
                         method="RK45"):
    """``dM/dt = (oint Phi dxi/dt Phi^{-1}) M`` with the initial frame frozen in ``t``.

    The loop integral is accumulated by the same adaptive integrator as the frame
    (augmented state ``(Phi, J)`` with ``dJ = Phi (dxi/dt) Phi^{-1} dz``).  Returns
    ``(M', M, commutator)``; the commutator of the hypothesis vanishes identically
    for a frozen initial frame.
    """
    grid = xi.grid
    P0 = np.array(_as_samples(Phi_base, grid), dtype=complex)
    Y = np.concatenate([P0, np.zeros_like(P0)], axis=0)
    L = grid.L

    def rhs(Y, z):
        Phi, _ = Y[:L], Y[L:]
        X = xi(z)
        return np.concatenate([Phi @ X, Phi @ xi.dt(z) @ inv2(Phi)], axis=0)

    pts = [base] + circle_path(base)
    nfev = 0
    for a, b in zip(pts[:-1], pts[1:]):
        Y, n = _segment(rhs, Y, a.log, b.log, ode_tol, method)
        nfev += n
    Phi_end, J = Y[:L], Y[L:]
    M = Phi_end @ inv2(P0)
    Md = J @ M
    return LoopMatrix(grid, Md), LoopMatrix(grid, M), 0.0


# ---------------------------------------------------------------------------
# Froebenius series

def L_operator(A, n, X):
    """``L_n(X) = [A, X] + n X``."""
    return comm(A, X) + n * X


def L_inverse(A, mu2, n, X, guard=1e-6):
    """``L_n^{-1}(X) = (1/n)(X - (n^2 - 4 mu^2)^{-1} (n I - 2A)[A, X])``."""
    den = n * n - 4 * mu2
    if np.any(np.abs(den) < guard):
        raise ResonanceError(f"n^2 - 4 mu^2 = {np.min(np.abs(den)):.2e} at n = {n}: resonant order")
    return (X - ((n * I2 - 2 * A) @ comm(A, X)) / den[..., None, None]) / n


def L_determinant(mu2, n):
    return n * n * (n * n - 4 * mu2)


@dataclass
class ZapForm:
    """``Phi = M z^A (I + sum_k P_k z^k)``."""

    grid: CircleGrid
    residue: DelaunayResidue
    P: np.ndarray                        # (K + 1, L, 2, 2); P[0] = I
    M: LoopMatrix | None = None
    info: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.P) - 1

    @property
    def A(self):
        return self.residue.A_samples(self.grid.lam)

    def P_samples(self, w):
        """``P(w)`` for scalar or array ``w``; shape ``w.shape + (L, 2, 2)``."""
        w = np.asarray(w, dtype=complex)
        out = np.broadcast_to(self.P[-1], w.shape + self.P.shape[1:]).copy()
        for k in range(self.K - 1, -1, -1):
            out = out * w[..., None, None, None] + self.P[k]
        return out

    def frame_samples(self, logw, with_M=True):
        """``M w^A P(w)`` from (array of) ``log w`` on the cover."""
        logw = np.asarray(logw, dtype=complex)
        F = z_pow_A_samples(self.A, logw) @ self.P_samples(np.exp(logw))
        if with_M and self.M is not None:
            F = self.M.samples @ F
        return F

    def frame(self, wc: CoverPoint, with_M=True) -> LoopMatrix:
        return LoopMatrix(self.grid, self.frame_samples(wc.log, with_M))

    def model_samples(self, logw):
        """Delaunay model frame ``M w^A``."""
        F = z_pow_A_samples(self.A, np.asarray(logw, dtype=complex))
        return F if self.M is None else self.M.samples @ F

    def fit_M(self, frames: dict):
        """Recover ``M = Phi(w) P(w)^{-1} w^{-A}`` from ``{CoverPoint: frame}``; average and report spread."""
        Ms = []
        for wc, Phi in frames.items():
            S = _as_samples(Phi, self.grid)
            Ms.append(S @ inv2(self.P_samples(wc.z)) @ z_pow_A_samples(self.A, -wc.log))
        Mavg = sum(Ms) / len(Ms)
        spread = max(float(np.max(opnorm2(m - Mavg))) for m in Ms)
        self.M = LoopMatrix(self.grid, Mavg)
        self.info["M_fit_spread"] = spread
        return self.M, spread


def frobenius_series(xi: Potential, K: int, radius=0.25, nz=64, c0_tol=1e-8) -> ZapForm:
    """Solve ``L_k(P_k) = sum_{i+j=k-1} P_i C_j`` for the regularized potential ``xi``.

    ``C_j`` are the Taylor coefficients of the holomorphic part of ``xi`` (FFT on
    ``|z| = radius``).  The ``z^0`` coefficient must already vanish (``P_1 = 0``).
    """
    res = xi.residue
    grid = xi.grid
    nz = max(nz, 2 * (K + 2) + 2)
    c = laurent_in_z(xi, K, radius, nz)
    A = res.A_samples(grid.lam)
    info = {"residue_residual": float(np.max(np.abs(c[0] - A))),
            "z0_term": float(np.max(np.abs(c[1])))}
    if info["residue_residual"] > 1e-8:
        raise DomainError(f"potential residue differs from A_t by {info['residue_residual']:.2e}")
    if info["z0_term"] > c0_tol:
        raise ResonanceError(
            f"z^0 term of size {info['z0_term']:.2e} would need the resonant inversion L_1^{{-1}}; "
            "regularize the potential first")
    C = c[1:]                            # C[j] multiplies z^j
    mu2 = mu_squared(res, grid.lam)
    P = np.zeros((K + 1, grid.L, 2, 2), dtype=complex)
    P[0] = I2
    for k in range(2, K + 1):
        rhs = sum(P[i] @ C[k - 1 - i] for i in range(0, k))
        P[k] = L_inverse(A, mu2, k, rhs)
    info["tail"] = float(np.max(np.abs(P[-1]))) if K >= 2 else 0.0
    return ZapForm(grid, res, P, None, info)
