"""2x2 complex matrix helpers, the su(2) model of R^3 and Laurent loops on the unit circle.

Loops are stored by their samples on the equispaced grid ``lam_m = exp(2 pi i m / L)``
and converted to Fourier (= Laurent) coefficients with the FFT.  All array helpers
accept arbitrary leading batch dimensions, ``(..., L, 2, 2)`` for loop samples and
``(..., 2, 2)`` for matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, NotResolvedError

I2 = np.eye(2, dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)


# ---------------------------------------------------------------------------
# 2x2 matrices

def det2(M):
    M = np.asarray(M)
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def adj2(M):
    """Adjugate; equals the inverse for SL(2) matrices."""
    M = np.asarray(M)
    out = np.empty(M.shape, dtype=np.result_type(M, complex))
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 1, 1] = M[..., 0, 0]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    return out


def inv2(M):
    return adj2(M) / det2(M)[..., None, None]


def dag(M):
    return np.conj(np.swapaxes(M, -1, -2))


def comm(A, B):
    return A @ B - B @ A


def opnorm2(M):
    """Largest singular value of 2x2 matrices, in closed form."""
    M = np.asarray(M)
    fro2 = np.sum(np.abs(M) ** 2, axis=(-1, -2))
    d = np.abs(det2(M))
    disc = np.sqrt(np.maximum(fro2 ** 2 - 4 * d ** 2, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def is_sl2(M, tol=1e-9):
    return bool(np.all(np.abs(det2(M) - 1) <= tol))


def is_su2(M, tol=1e-9):
    M = np.asarray(M)
    unit = np.max(opnorm2(M @ dag(M) - I2), initial=0.0) <= tol
    return bool(unit and is_sl2(M, tol))


def expm_traceless(X):
    """``exp(X)`` for trace-free 2x2 matrices: ``cosh(d) I + sinh(d)/d X`` with ``d^2 = -det X``.

    Both coefficient functions are even in ``d``, so the branch of the square root is irrelevant.
    """
    X = np.asarray(X, dtype=complex)
    d2 = -det2(X)
    d = np.sqrt(d2)
    small = np.abs(d) < 1e-4
    dsafe = np.where(small, 1.0, d)
    ch = np.where(small, 1 + d2 / 2 + d2 ** 2 / 24, np.cosh(dsafe))
    sh = np.where(small, 1 + d2 / 6 + d2 ** 2 / 120, np.sinh(dsafe) / dsafe)
    return ch[..., None, None] * I2 + sh[..., None, None] * X


# ---------------------------------------------------------------------------
# su(2) model of R^3

def su2_from_r3(x):
    """Map ``(x1, x2, x3)`` to ``(-i/2) [[-x3, x1 + i x2], [x1 - i x2, x3]]``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise DomainError("expected trailing dimension 3")
    X = np.empty(x.shape[:-1] + (2, 2), dtype=complex)
    X[..., 0, 0] = 0.5j * x[..., 2]
    X[..., 1, 1] = -0.5j * x[..., 2]
    X[..., 0, 1] = -0.5j * (x[..., 0] + 1j * x[..., 1])
    X[..., 1, 0] = -0.5j * (x[..., 0] - 1j * x[..., 1])
    return X


def su2_projection(X):
    """Nearest trace-free anti-Hermitian matrix and the distance to it."""
    X = np.asarray(X, dtype=complex)
    Y = 0.5 * (X - dag(X))
    tr = 0.5 * (Y[..., 0, 0] + Y[..., 1, 1])
    Y = Y.copy()
    Y[..., 0, 0] -= tr
    Y[..., 1, 1] -= tr
    resid = np.sqrt(np.sum(np.abs(X - Y) ** 2, axis=(-1, -2)))
    return Y, resid


def r3_from_su2(X, tol=1e-9):
    X = np.asarray(X, dtype=complex)
    _, resid = su2_projection(X)
    if np.any(resid > tol * np.maximum(1.0, np.sqrt(np.sum(np.abs(X) ** 2, axis=(-1, -2))))):
        raise DomainError("matrix is not trace-free anti-Hermitian within tolerance")
    return r3_from_su2_unchecked(X)


def r3_from_su2_unchecked(X):
    X = np.asarray(X, dtype=complex)
    u = 2j * X[..., 0, 1]   # x1 + i x2
    v = 2j * X[..., 1, 0]   # x1 - i x2
    x1 = 0.5 * (u + v)
    x2 = (u - v) / 2j
    x3 = 1j * (X[..., 1, 1] - X[..., 0, 0])
    return np.stack([x1.real, x2.real, x3.real], axis=-1)


def su2_action(U, X):
    """Conjugation ``U X U^{-1}`` of su(2) elements by SU(2) matrices."""
    return U @ X @ inv2(U)


# ---------------------------------------------------------------------------
# sample / coefficient conversions on the circle

def freqs(L):
    """Integer frequencies in FFT order, Nyquist included as -L/2."""
    return np.fft.fftfreq(L, d=1.0 / L).astype(int)


def coeffs_from_samples(samples, axis=-3):
    return np.fft.fft(samples, axis=axis) / samples.shape[axis]


def samples_from_coeffs(coeffs, axis=-3):
    return np.fft.ifft(coeffs, axis=axis) * coeffs.shape[axis]


def _freq_weights(L, power, drop_nyquist=True):
    k = freqs(L).astype(float)
    w = k ** power if power else np.ones(L)
    if drop_nyquist and L % 2 == 0:
        w[L // 2] = 0.0
    return w


def deriv_samples(samples):
    """Spectral d/dlambda of loop samples ``(..., L, 2, 2)`` on the grid.

    ``d/dlam sum C_k lam^k = sum k C_k lam^(k-1)``; the Nyquist mode is dropped.
    """
    L = samples.shape[-3]
    c = coeffs_from_samples(samples) * _freq_weights(L, 1)[:, None, None]
    lam = np.exp(2j * np.pi * np.arange(L) / L)
    return samples_from_coeffs(c) / lam[:, None, None]


def deriv_at_one(samples):
    """``d/dlam`` at lambda = 1, i.e. ``sum k C_k``."""
    L = samples.shape[-3]
    return np.einsum("k,...kij->...ij", _freq_weights(L, 1), coeffs_from_samples(samples))


def eval_coeffs(coeffs, lam, plus_only=False, N=None):
    """Evaluate ``sum_k C_k lam^k`` from FFT-ordered coefficients ``(..., L, 2, 2)``.

    With ``N`` only ``|k| <= N`` enters (off the circle, round-off in the top
    coefficients would otherwise be amplified by ``|lam|^(L/2)``).
    """
    L = coeffs.shape[-3]
    k = freqs(L)
    keep = np.ones(L, dtype=bool)
    if L % 2 == 0:
        keep[L // 2] = False
    if N is not None:
        keep &= np.abs(k) <= N
    if plus_only:
        keep &= k >= 0
    lam = complex(lam)
    if lam == 0:
        w = (k == 0).astype(complex)
    else:
        w = np.where(keep, lam ** k.astype(float), 0.0)
    return np.einsum("k,...kij->...ij", w, coeffs)


# ---------------------------------------------------------------------------
# loops

@dataclass(frozen=True)
class CircleGrid:
    """Equispaced samples ``lam_m = exp(2 pi i m / L)`` on the unit circle.

    ``N`` is the truncation order used for the resolution test and ``annulus_R``
    the outer radius of the annulus loops are assumed to extend to.
    """

    L: int = 256
    N: int = 64
    annulus_R: float = 1.1
    tail_tol: float = 1e-10

    def __post_init__(self):
        if self.L < 8 or self.L & (self.L - 1):
            raise DomainError(f"L must be a power of two >= 8, got {self.L}")
        if not 4 < self.N <= self.L // 2:
            raise DomainError(f"need 4 < N <= L/2, got N={self.N}, L={self.L}")
        if self.annulus_R <= 1:
            raise DomainError("annulus_R must be > 1")

    @cached_property
    def lam(self):
        return np.exp(2j * np.pi * np.arange(self.L) / self.L)

    @cached_property
    def k(self):
        return freqs(self.L)


DEFAULT_GRID = CircleGrid()


class LoopMatrix:
    """A 2x2 matrix-valued Laurent loop, held as samples on a :class:`CircleGrid`.

    ``kind`` is ``"general"`` for loops on the annulus or ``"plus"`` for loops
    extending holomorphically to the disk (which may then be evaluated at 0).
    """

    def __init__(self, grid: CircleGrid, samples, kind: str = "general"):
        samples = np.array(samples, dtype=complex)
        if samples.shape != (grid.L, 2, 2):
            raise DomainError(f"expected samples of shape {(grid.L, 2, 2)}, got {samples.shape}")
        if kind not in ("general", "plus"):
            raise DomainError(f"unknown loop kind {kind!r}")
        self.grid = grid
        self.samples = samples
        self.samples.setflags(write=False)
        self.kind = kind

    # construction ---------------------------------------------------------
    @classmethod
    def from_function(cls, grid, fn, kind="general"):
        return cls(grid, np.asarray([fn(l) for l in grid.lam], dtype=complex), kind)

    @classmethod
    def constant(cls, grid, M):
        return cls(grid, np.broadcast_to(np.asarray(M, dtype=complex), (grid.L, 2, 2)).copy(), "plus")

    @classmethod
    def from_laurent(cls, grid, terms: dict, kind="general"):
        """Loop ``sum_j terms[j] lam^j`` from a finite dict of 2x2 coefficients."""
        s = np.zeros((grid.L, 2, 2), dtype=complex)
        for j, C in terms.items():
            s += grid.lam[:, None, None] ** j * np.asarray(C, dtype=complex)
        return cls(grid, s, kind)

    # coefficients ---------------------------------------------------------
    @cached_property
    def fft_coeffs(self):
        return coeffs_from_samples(self.samples)

    def coeff(self, k: int):
        return self.fft_coeffs[k % self.grid.L]

    def coeffs(self, N: int | None = None):
        """Coefficients ``C_k`` for ``k = -N..N`` as an array of shape ``(2N+1, 2, 2)``."""
        N = self.grid.N if N is None else N
        return np.stack([self.coeff(k) for k in range(-N, N + 1)])

    @property
    def tail_energy(self) -> float:
        N = self.grid.N
        mask = np.abs(self.grid.k) > N - 4
        return float(np.sum(np.sqrt(np.sum(np.abs(self.fft_coeffs[mask]) ** 2, axis=(-1, -2)))))

    @property
    def negative_energy(self) -> float:
        """``sum_{k<0} |C_k|``; zero for plus-loops up to round-off."""
        mask = self.grid.k < 0
        return float(np.sum(np.sqrt(np.sum(np.abs(self.fft_coeffs[mask]) ** 2, axis=(-1, -2)))))

    @property
    def resolved(self) -> bool:
        """Tail test, relative to the loop's scale (loops of norm ~1 use the absolute tail)."""
        scale = max(1.0, self.sup_norm())
        return self.tail_energy <= self.grid.tail_tol * scale

    def require_resolved(self, what="loop"):
        if not self.resolved:
            raise NotResolvedError(
                f"{what} is not resolved: tail energy {self.tail_energy:.3e} "
                f"> {self.grid.tail_tol:.1e}; increase L/N")

    # evaluation -----------------------------------------------------------
    def __call__(self, lam):
        lam = complex(lam)
        R = self.grid.annulus_R
        r = abs(lam)
        if self.kind == "plus":
            if r >= R:
                raise DomainError(f"|lambda|={r} outside the disk of radius {R}")
        elif not (1 / R < r < R):
            raise DomainError(f"|lambda|={r} outside the annulus 1/{R} < |lambda| < {R}")
        return eval_coeffs(self.fft_coeffs, lam, plus_only=self.kind == "plus", N=self.grid.N)

    def at_one(self):
        return self.samples[0]

    # algebra --------------------------------------------------------------
    def _wrap(self, samples, kind=None):
        return LoopMatrix(self.grid, samples, kind or "general")

    def __matmul__(self, other):
        if isinstance(other, LoopMatrix):
            kind = "plus" if self.kind == other.kind == "plus" else "general"
            return self._wrap(self.samples @ other.samples, kind)
        return self._wrap(self.samples @ np.asarray(other), self.kind)

    def __rmatmul__(self, other):
        return self._wrap(np.asarray(other) @ self.samples, self.kind)

    def __add__(self, other):
        o = other.samples if isinstance(other, LoopMatrix) else np.asarray(other)
        return self._wrap(self.samples + o)

    def __sub__(self, other):
        o = other.samples if isinstance(other, LoopMatrix) else np.asarray(other)
        return self._wrap(self.samples - o)

    def __mul__(self, scalar):
        return self._wrap(self.samples * scalar, self.kind)

    __rmul__ = __mul__

    def inverse(self):
        return self._wrap(inv2(self.samples), self.kind)

    def det(self):
        return det2(self.samples)

    def deriv(self):
        return loop_deriv_lambda(self)

    def sup_norm(self) -> float:
        return sup_norm_circle(self)

    def __repr__(self):
        return f"LoopMatrix(L={self.grid.L}, kind={self.kind}, tail={self.tail_energy:.2e})"


def loop_from_samples(grid: CircleGrid, samples, kind="general") -> LoopMatrix:
    samples = np.asarray(samples, dtype=complex)
    if samples.shape[0] != grid.L:
        raise DomainError(f"got {samples.shape[0]} samples for a grid of {grid.L}")
    return LoopMatrix(grid, samples, kind)


def loop_eval(loop: LoopMatrix, lam):
    return loop(lam)


def loop_deriv_lambda(loop: LoopMatrix, check=True) -> LoopMatrix:
    if check:
        loop.require_resolved()
    return loop._wrap(deriv_samples(loop.samples), loop.kind)


def sup_norm_circle(loop: LoopMatrix) -> float:
    return float(np.max(opnorm2(loop.samples)))


def sup_norm_radius(loop: LoopMatrix, radius: float, n: int | None = None) -> float:
    """Sup of the operator norm on the circle ``|lam| = radius`` (needs the loop's extension)."""
    n = n or loop.grid.L
    c = loop.fft_coeffs
    k = loop.grid.k.astype(float)
    w = radius ** k
    if loop.grid.L % 2 == 0:
        w[loop.grid.L // 2] = 0.0
    vals = samples_from_coeffs(c * w[:, None, None])
    return float(np.max(opnorm2(vals)))


def reflection_residual(loop: LoopMatrix, radius: float) -> float:
    """Sup over ``|lam| = radius`` of ``|| conj(F(1/conj lam))^T - F(lam)^{-1} ||``."""
    L = loop.grid.L
    k = loop.grid.k.astype(float)
    c = loop.fft_coeffs.copy()
    if L % 2 == 0:
        c[L // 2] = 0.0
    F_out = samples_from_coeffs(c * (radius ** k)[:, None, None])
    F_in = samples_from_coeffs(c * (radius ** -k)[:, None, None])
    return float(np.max(opnorm2(dag(F_in) - inv2(F_out))))


def unitary_reflection_extend(F: LoopMatrix, tol=1e-8) -> LoopMatrix:
    """Extend a circle-unitary loop to the annulus through Schwarz reflection.

    The combination ``[[F11+F22, F12-F21], [i(F12+F21), i(F11-F22)]]`` is real on the
    circle; we make its Fourier coefficients exactly conjugate-symmetric (removing
    round-off that would break the reflection identity off the circle) and rebuild F.
    Raises :class:`DomainError` if F is not SU(2)-valued on the grid.
    """
    S = F.samples
    if not is_su2(S, tol):
        raise DomainError("loop is not SU(2)-valued on the circle")
    T = np.empty_like(S)
    T[:, 0, 0] = S[:, 0, 0] + S[:, 1, 1]
    T[:, 0, 1] = S[:, 0, 1] - S[:, 1, 0]
    T[:, 1, 0] = 1j * (S[:, 0, 1] + S[:, 1, 0])
    T[:, 1, 1] = 1j * (S[:, 0, 0] - S[:, 1, 1])
    T = T.real.astype(complex)  # real on the circle <=> conj-symmetric coefficients
    out = np.empty_like(S)
    out[:, 0, 0] = 0.5 * (T[:, 0, 0] - 1j * T[:, 1, 1])
    out[:, 1, 1] = 0.5 * (T[:, 0, 0] + 1j * T[:, 1, 1])
    out[:, 0, 1] = 0.5 * (T[:, 0, 1] - 1j * T[:, 1, 0])
    out[:, 1, 0] = 0.5 * (-T[:, 0, 1] - 1j * T[:, 1, 0])
    return LoopMatrix(F.grid, out, F.kind)
