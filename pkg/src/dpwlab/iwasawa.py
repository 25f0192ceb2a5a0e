"""Iwasawa decomposition ``Phi = F B`` of SL(2, C) loops.

``F`` is SU(2)-valued on the unit circle and ``B`` extends holomorphically to the
unit disk with ``B(0)`` upper triangular with positive diagonal.  Since ``F`` is
unitary, ``Phi^* Phi = B^* B`` on the circle, so ``B`` is the normalized spectral
factor of the positive loop ``P = Phi^* Phi``.

The factor is computed from a finite section of the block Toeplitz operator of
``P``: the plus-loop ``X = sum_{k=0}^n x_k lam^k`` solving ``(P X)_j = delta_j0 I``
for ``0 <= j <= n`` equals ``B^{-1} (B(0)^*)^{-1}`` in the limit, and ``x_0`` gives
``B(0)^* B(0)`` through its Cholesky factor.  ``n`` is doubled until the section
has converged (unitarity of ``F``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FactorizationError
from .loopalg import (
    I2, CircleGrid, LoopMatrix, coeffs_from_samples, dag, det2, inv2, opnorm2,
    samples_from_coeffs,
)

log = logging.getLogger(__name__)

FACTOR_TOL = 1e-9
DECOMP_TOL = 1e-8
COND_MAX = 1e12


@dataclass
class IwasawaFactors:
    F: LoopMatrix
    B: LoopMatrix
    residual: float
    unitarity: float = 0.0
    negative_energy: float = 0.0
    nblocks: int = 0
    info: dict = field(default_factory=dict)

    @property
    def rho(self) -> float:
        """Upper-left entry of ``B(0)``."""
        return float(self.B.coeff(0)[0, 0].real)


def explicit_iwasawa_hat(a, b, c, d, grid: CircleGrid | None = None, tol=1e-10) -> IwasawaFactors:
    """Closed-form factors of ``[[a, b/lam], [c lam, d]]`` with ``ad - bc = 1``."""
    if abs(a * d - b * c - 1) > tol:
        raise DomainError(f"ad - bc = {a * d - b * c}, expected 1")
    grid = grid or CircleGrid()
    n2 = abs(b) ** 2 + abs(d) ** 2
    k = 1 / np.sqrt(n2)
    F = LoopMatrix.from_laurent(grid, {
        -1: k * np.array([[0, b], [0, 0]]),
        0: k * np.array([[np.conj(d), 0], [0, d]]),
        1: k * np.array([[0, 0], [-np.conj(b), 0]]),
    })
    B = LoopMatrix.from_laurent(grid, {
        0: k * np.array([[1, 0], [0, n2]]),
        1: k * np.array([[0, 0], [a * np.conj(b) + c * np.conj(d), 0]]),
    }, kind="plus")
    Phi = hat_loop(a, b, c, d, grid)
    res = float(np.max(opnorm2(F.samples @ B.samples - Phi.samples)))
    return IwasawaFactors(F, B, res, nblocks=0, info={"method": "explicit"})


def hat_loop(a, b, c, d, grid: CircleGrid) -> LoopMatrix:
    return LoopMatrix.from_laurent(grid, {
        -1: np.array([[0, b], [0, 0]]),
        0: np.array([[a, 0], [0, d]]),
        1: np.array([[0, 0], [c, 0]]),
    })


# ---------------------------------------------------------------------------
# batched numerical core

def _hermitian_eigs(P):
    """Eigenvalues (min, max) of Hermitian 2x2 matrices."""
    tr = 0.5 * (P[..., 0, 0].real + P[..., 1, 1].real)
    dif = 0.5 * (P[..., 0, 0].real - P[..., 1, 1].real)
    rad = np.sqrt(dif ** 2 + np.abs(P[..., 0, 1]) ** 2)
    return tr - rad, tr + rad


def _check_positive(P):
    lo, hi = _hermitian_eigs(P)
    if np.any(lo <= 0):
        raise FactorizationError(
            f"loop is not positive definite on the circle (min eigenvalue {np.min(lo):.3e})")
    cond = np.max(hi / lo)
    if cond > COND_MAX:
        raise FactorizationError(
            f"condition number {cond:.2e} exceeds {COND_MAX:.0e}; the sample is too "
            "close to the end (raise z_min)")
    return cond


def _section_solve(Pc, n):
    """Solve the (n+1)-block finite section; returns x_k of shape (..., n+1, 2, 2)."""
    L = Pc.shape[-3]
    j = np.arange(n + 1)
    idx = (j[:, None] - j[None, :]) % L
    blocks = Pc[..., idx, :, :]                       # (..., n+1, n+1, 2, 2)
    batch = Pc.shape[:-3]
    T = np.swapaxes(blocks, -3, -2).reshape(batch + (2 * (n + 1), 2 * (n + 1)))
    T = 0.5 * (T + dag(T))
    E = np.zeros(batch + (2 * (n + 1), 2), dtype=complex)
    E[..., 0, 0] = 1.0
    E[..., 1, 1] = 1.0
    try:
        Lc = np.linalg.cholesky(T)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("block Toeplitz section is not positive definite") from exc
    y = np.linalg.solve(Lc, E)
    x = np.linalg.solve(dag(Lc), y)
    return x.reshape(batch + (n + 1, 2, 2))


def _poly_on_grid(x, L):
    """Evaluate ``sum_k x_k lam^k`` on the L-point grid (folding k mod L)."""
    n1 = x.shape[-3]
    c = np.zeros(x.shape[:-3] + (L, 2, 2), dtype=complex)
    for k0 in range(0, n1, L):
        part = x[..., k0:k0 + L, :, :]
        c[..., :part.shape[-3], :, :] += part
    return samples_from_coeffs(c)


def _upper_cholesky(H):
    """Upper-triangular ``U`` with positive diagonal and ``U^* U = H``."""
    Lc = np.linalg.cholesky(0.5 * (H + dag(H)))
    return dag(Lc)


def factor_samples(P, nblocks=None, max_blocks=None, tol=FACTOR_TOL):
    """Spectral factor of positive loop samples ``P`` (..., L, 2, 2).

    Returns ``(Binv, b0, nblocks, conv)``: samples of ``B^{-1}``, the 2x2 value
    ``B(0)``, the section size used and the convergence measure (relative size of
    the last section coefficients).
    """
    L = P.shape[-3]
    _check_positive(P)
    Pc = coeffs_from_samples(P)
    max_blocks = max_blocks or (L // 2 - 1)
    n = nblocks or min(max_blocks, 16)
    while True:
        x = _section_solve(Pc, n)
        scale = np.max(np.abs(x[..., 0, :, :]), axis=(-1, -2))
        last = np.max(np.abs(x[..., -2:, :, :]), axis=(-1, -2, -3))
        conv = float(np.max(last / scale))
        if conv <= 1e-3 * tol or n >= max_blocks:
            break
        n = min(max_blocks, 2 * n)
    x0 = x[..., 0, :, :]
    b0 = _upper_cholesky(inv2(0.5 * (x0 + dag(x0))))
    Binv = _poly_on_grid(x, L) @ dag(b0)[..., None, :, :]
    return Binv, b0, n, conv


def iwasawa_samples(Phi, nblocks=None, tol=DECOMP_TOL):
    """Batched Iwasawa factors for samples ``Phi`` of shape (..., L, 2, 2).

    Returns ``(F, B, b0, diag)`` with ``F``, ``B`` sample arrays of Phi's shape,
    ``b0 = B(0)`` and a dict of residual arrays.
    """
    Phi = np.asarray(Phi, dtype=complex)
    P = dag(Phi) @ Phi
    Binv, b0, n, conv = factor_samples(P, nblocks=nblocks)
    F = Phi @ Binv
    B = inv2(Binv)
    # det B is analytic in the disk, unimodular on the circle and positive at 0,
    # hence == 1; divide out its (principal) square root to remove round-off drift.
    s = np.sqrt(det2(B))
    B = B / s[..., None, None]
    F = F * s[..., None, None]
    unit = np.max(opnorm2(dag(F) @ F - I2), axis=-1)
    resid = np.max(opnorm2(F @ B - Phi), axis=-1)
    diag = {"unitarity": unit, "residual": resid, "nblocks": n, "section_conv": conv}
    if np.any(unit > tol * np.maximum(1.0, np.max(opnorm2(Phi), axis=-1) ** 2)):
        log.warning("Iwasawa unitarity residual %.2e above tolerance", float(np.max(unit)))
    return F, B, b0, diag


def spectral_factorize(P: LoopMatrix, unimodular=True) -> LoopMatrix:
    """Plus-loop ``B`` with ``B^* B = P`` on the circle and ``B(0)`` upper triangular, positive diagonal.

    With ``unimodular`` the result is further divided by the analytic square root
    of ``det B`` (this changes ``B^* B`` unless ``det P == 1``).
    """
    S = P.samples
    herm = np.max(opnorm2(S - dag(S)))
    if herm > 1e-10 * max(1.0, P.sup_norm()):
        raise FactorizationError(f"loop is not Hermitian on the circle (residual {herm:.2e})")
    Binv, b0, n, conv = factor_samples(S)
    if conv > FACTOR_TOL:
        raise FactorizationError(
            f"Toeplitz section did not converge (tail {conv:.2e} > {FACTOR_TOL:.0e} at {n} blocks)")
    B = inv2(Binv)
    if unimodular:
        d = det2(B)
        logd = coeffs_from_samples(np.log(d)[:, None, None])[:, 0, 0]
        # keep the plus part: the principal branch is analytic because det B(0) > 0
        k = P.grid.k
        logd[k < 0] = 0
        root = np.exp(0.5 * samples_from_coeffs(logd[:, None, None])[:, 0, 0])
        B = B / root[:, None, None]
    B = _qr_normalize(B, P.grid)
    return LoopMatrix(P.grid, B, "plus")


def _qr_normalize(B, grid):
    """Left-multiply by the unitary ``Q^*`` from ``B(0) = Q R`` (R upper, positive diagonal)."""
    b0 = coeffs_from_samples(B)[0]
    Q, R = np.linalg.qr(b0)
    ph = np.diag(R) / np.abs(np.diag(R))
    Q = Q * ph[None, :]
    return dag(Q) @ B


def iwasawa_decompose(Phi: LoopMatrix, tol=DECOMP_TOL, nblocks=None) -> IwasawaFactors:
    if np.max(np.abs(Phi.det() - 1)) > 1e-8:
        raise DomainError("loop is not SL(2)-valued on the grid")
    F, B, b0, diag = iwasawa_samples(Phi.samples, nblocks=nblocks, tol=tol)
    Fl = LoopMatrix(Phi.grid, F)
    Bl = LoopMatrix(Phi.grid, B, "plus")
    return IwasawaFactors(
        Fl, Bl, float(diag["residual"]), unitarity=float(diag["unitarity"]),
        negative_energy=Bl.negative_energy, nblocks=diag["nblocks"],
        info={"section_conv": diag["section_conv"]})


def uni(Phi: LoopMatrix) -> LoopMatrix:
    return iwasawa_decompose(Phi).F


def pos(Phi: LoopMatrix) -> LoopMatrix:
    return iwasawa_decompose(Phi).B
