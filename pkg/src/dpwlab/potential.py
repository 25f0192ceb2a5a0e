"""Delaunay residues, perturbed Delaunay potentials, gauges and Moebius pull-backs.

A potential is ``xi_t(z, lam) dz`` with ``xi_t = A_t(lam) / z + R_t(z, lam)`` where

    A_t(lam) = [[0, r / lam + s], [r lam + s, 0]],    r + s = 1/2,  r s = t,

and ``R_t`` is a finite table ``sum c_{k,j}(t) z^k lam^j`` whose coefficients are
polynomials in ``t`` without constant term.  Everything in ``lam`` is a Laurent
polynomial here, which lets the regularizing gauge be computed exactly in
coefficient space.

Evaluators (``Potential`` subclasses) are bound to a ``CircleGrid`` and return the
samples ``xi(z, lam_m)`` of shape ``(L, 2, 2)`` for a complex ``z``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ResonanceError
from .iwasawa import explicit_iwasawa_hat, hat_loop
from .loopalg import (
    I2, CircleGrid, LoopMatrix, comm, det2, dag, expm_traceless, inv2, opnorm2,
)

log = logging.getLogger(__name__)

MAX_Z_DEGREE = 8
LAM_RANGE = (-1, 4)
MAX_T_DEGREE = 3
REG_TOL = 1e-9
ENTRIES = {"11": (0, 0), "12": (0, 1), "21": (1, 0), "22": (1, 1)}


# ---------------------------------------------------------------------------
# Delaunay residue

@dataclass(frozen=True)
class DelaunayResidue:
    t: float
    r: float
    s: float
    branch: str

    def A_samples(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = np.zeros(lam.shape + (2, 2), dtype=complex)
        out[..., 0, 1] = self.r / lam + self.s
        out[..., 1, 0] = self.r * lam + self.s
        return out

    def A_laurent(self) -> "LaurentPoly":
        c = np.zeros((3, 2, 2), dtype=complex)
        c[0, 0, 1] = self.r
        c[1, 0, 1] = self.s
        c[1, 1, 0] = self.s
        c[2, 1, 0] = self.r
        return LaurentPoly(-1, c)

    def drds_dt(self):
        """``(dr/dt, ds/dt)``; singular at the cylinder ``t = 1/16``."""
        if self.r == self.s:
            raise DomainError("r and s are not differentiable in t at t = 1/16")
        dr = 1.0 / (self.s - self.r)
        return dr, -dr


def solve_rs(t: float, branch: str = "spherical") -> DelaunayResidue:
    """Roots of ``X^2 - X/2 + t``; ``r`` takes the larger root iff ``branch`` is spherical."""
    if branch not in ("spherical", "catenoidal"):
        raise DomainError(f"unknown branch {branch!r}")
    t = float(t)
    if t > 1 / 16:
        raise DomainError(f"t = {t} > 1/16: r + s = 1/2 and r s = t have no real solution")
    q = math.sqrt(max(0.0, 1 - 16 * t))
    big = (1 + q) / 4
    small = t / big           # stable form of (1 - q)/4
    r, s = (big, small) if branch == "spherical" else (small, big)
    return DelaunayResidue(t, r, s, branch)


def mu_squared(res: DelaunayResidue, lam):
    lam = np.asarray(lam, dtype=complex)
    if np.any(lam == 0):
        raise DomainError("mu^2 is undefined at lam = 0")
    return 0.25 + res.t * (lam - 1) ** 2 / lam


def remark_range_residual(res: DelaunayResidue, grid: CircleGrid):
    """``max |mu^2 - 1/4|`` over the grid circles of radius ``1/R, 1, R`` (must stay below 1/4)."""
    worst = 0.0
    for rad in (1 / grid.annulus_R, 1.0, grid.annulus_R):
        worst = max(worst, float(np.max(np.abs(mu_squared(res, rad * grid.lam) - 0.25))))
    return worst


def check_remark_range(res: DelaunayResidue, grid: CircleGrid):
    worst = remark_range_residual(res, grid)
    if worst >= 0.25:
        raise DomainError(
            f"|mu^2 - 1/4| reaches {worst:.4f} >= 1/4 on the annulus (t = {res.t}, "
            f"R = {grid.annulus_R}); lower |t| or R")
    return worst


def hmatrix(grid: CircleGrid) -> LoopMatrix:
    """``H = (1/sqrt 2) [[1, -1/lam], [lam, 1]]``, diagonalizing ``A_0`` in the spherical case."""
    return hat_loop(1 / math.sqrt(2), -1 / math.sqrt(2), 1 / math.sqrt(2), 1 / math.sqrt(2), grid)


# ---------------------------------------------------------------------------
# matrix-valued Laurent polynomials in lam

@dataclass
class LaurentPoly:
    lo: int
    c: np.ndarray                        # (n, 2, 2), c[i] multiplies lam^(lo + i)

    @property
    def hi(self):
        return self.lo + len(self.c) - 1

    def coeff(self, k):
        i = k - self.lo
        if 0 <= i < len(self.c):
            return self.c[i]
        return np.zeros((2, 2), dtype=complex)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = np.zeros(lam.shape + (2, 2), dtype=complex)
        for i in range(len(self.c) - 1, -1, -1):
            out = out * lam[..., None, None] + self.c[i]
        return out * (lam ** self.lo)[..., None, None]

    def __add__(self, other):
        lo = min(self.lo, other.lo)
        hi = max(self.hi, other.hi)
        c = np.zeros((hi - lo + 1, 2, 2), dtype=complex)
        c[self.lo - lo:self.hi - lo + 1] += self.c
        c[other.lo - lo:other.hi - lo + 1] += other.c
        return LaurentPoly(lo, c)

    def __neg__(self):
        return LaurentPoly(self.lo, -self.c)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, a):
        return LaurentPoly(self.lo, a * self.c)

    def __matmul__(self, other):
        n = len(self.c) + len(other.c) - 1
        c = np.zeros((n, 2, 2), dtype=complex)
        for i, a in enumerate(self.c):
            c[i:i + len(other.c)] += a @ other.c
        return LaurentPoly(self.lo + other.lo, c)

    def shift(self, m):
        return LaurentPoly(self.lo + m, self.c)

    def norm(self):
        return float(np.sum(np.abs(self.c)))

    def samples(self, grid: CircleGrid):
        return self(grid.lam)

    def div_lam_minus_one_squared(self):
        """Exact division by ``(lam - 1)^2``; returns (quotient, (|K(1)|, |K'(1)|))."""
        q = self.c[::-1].copy()          # high -> low powers of lam^(-lo) K
        rems = []
        for _ in range(2):
            b = np.zeros_like(q[:-1])
            acc = np.zeros((2, 2), dtype=complex)
            for i in range(len(q) - 1):
                acc = acc + q[i]
                b[i] = acc
            rems.append(float(np.max(np.abs(acc + q[-1]))))
            q = b
        return LaurentPoly(self.lo, q[::-1].copy()), tuple(rems)


def I_laurent():
    return LaurentPoly(0, I2[None].copy())


# ---------------------------------------------------------------------------
# perturbation tables

@dataclass(frozen=True)
class PerturbationTerm:
    k: int
    j: int
    entry: str
    t_poly: tuple                        # coefficients of t^0, t^1, ...; t^0 must vanish

    def value(self, t):
        return sum(c * t ** i for i, c in enumerate(self.t_poly))

    def dvalue(self, t):
        return sum(i * c * t ** (i - 1) for i, c in enumerate(self.t_poly) if i > 0)

    def value_over_t(self, t):
        """``c(t) / t`` (continuous at t = 0)."""
        return sum(c * t ** (i - 1) for i, c in enumerate(self.t_poly) if i > 0)


def _complex(v):
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise DomainError(f"complex numbers are written [re, im], got {v!r}")
        return complex(float(v[0]), float(v[1]))
    return complex(v)


@dataclass(frozen=True)
class PerturbationSpec:
    terms: tuple = ()
    epsilon: float = 0.5

    def __post_init__(self):
        for term in self.terms:
            if term.entry not in ENTRIES:
                raise DomainError(f"entry must be one of {sorted(ENTRIES)}, got {term.entry!r}")
            if not 0 <= term.k <= MAX_Z_DEGREE:
                raise DomainError(f"z-power k = {term.k} outside [0, {MAX_Z_DEGREE}]")
            if not LAM_RANGE[0] <= term.j <= LAM_RANGE[1]:
                raise DomainError(f"lam-power j = {term.j} outside {list(LAM_RANGE)}")
            if term.j == -1 and term.entry != "12":
                raise DomainError("lam^-1 terms are only allowed in the upper-right entry")
            if len(term.t_poly) == 0 or term.t_poly[0] != 0:
                raise DomainError("t_poly must have zero constant term (R_0 = 0)")
            if len(term.t_poly) - 1 > MAX_T_DEGREE:
                raise DomainError(f"t-polynomial degree above {MAX_T_DEGREE}")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        # trace-free check on the assembled coefficients (t-polynomials compared exactly)
        for (k, j), coef in self._poly_table().items():
            if np.any(np.abs(coef[:, 0, 0] + coef[:, 1, 1]) > 1e-14):
                raise DomainError(f"coefficient of z^{k} lam^{j} is not trace-free")

    def _poly_table(self):
        tab = {}
        for term in self.terms:
            arr = tab.setdefault((term.k, term.j), np.zeros((MAX_T_DEGREE + 1, 2, 2), dtype=complex))
            a, b = ENTRIES[term.entry]
            arr[:len(term.t_poly), a, b] += np.asarray(term.t_poly, dtype=complex)
        return tab

    @property
    def is_zero(self):
        return all(np.all(np.asarray(t.t_poly) == 0) for t in self.terms)

    @property
    def z_degree(self):
        return max((t.k for t in self.terms), default=-1)

    def table(self, t, which="value"):
        """Dict ``k -> LaurentPoly`` of the z^k coefficient at ``t``.

        ``which`` is ``value``, ``dt`` (t-derivative) or ``over_t`` (value / t).
        """
        out = {}
        for term in self.terms:
            v = {"value": term.value, "dt": term.dvalue, "over_t": term.value_over_t}[which](t)
            c = np.zeros((LAM_RANGE[1] - LAM_RANGE[0] + 1, 2, 2), dtype=complex)
            a, b = ENTRIES[term.entry]
            c[term.j - LAM_RANGE[0], a, b] = v
            lp = LaurentPoly(LAM_RANGE[0], c)
            out[term.k] = out[term.k] + lp if term.k in out else lp
        return out

    def to_json(self):
        out = []
        for term in self.terms:
            out.append({"k": term.k, "j": term.j, "entry": term.entry,
                        "t_poly": [[float(np.real(c)), float(np.imag(c))] for c in term.t_poly]})
        return out

    @classmethod
    def from_json(cls, items, epsilon):
        terms = []
        for it in items:
            terms.append(PerturbationTerm(int(it["k"]), int(it["j"]), str(it["entry"]),
                                          tuple(_complex(v) for v in it["t_poly"])))
        return cls(tuple(terms), float(epsilon))


@dataclass(frozen=True)
class PotentialSpec:
    residue: DelaunayResidue
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)

    @property
    def t(self):
        return self.residue.t

    @property
    def epsilon(self):
        return self.perturbation.epsilon

    @classmethod
    def delaunay(cls, t, branch="spherical", epsilon=np.inf):
        return cls(solve_rs(t, branch), PerturbationSpec((), epsilon))

    def with_t(self, t):
        return PotentialSpec(solve_rs(t, self.residue.branch), self.perturbation)

    def check_nondegenerate(self):
        """``z xi_{-1}^{12}`` must not vanish on the closed disk of radius epsilon.

        It is the polynomial ``r + sum_k c_k z^(k+1)``, so its roots are checked directly.
        Returns the distance from the disk boundary to the nearest root (inf if none).
        """
        tab = self.perturbation.table(self.t)
        coef = np.zeros(MAX_Z_DEGREE + 2, dtype=complex)
        coef[0] = self.residue.r
        for k, lp in tab.items():
            coef[k + 1] += lp.coeff(-1)[0, 1] if lp.lo <= -1 else 0
        nz = np.flatnonzero(np.abs(coef) > 0)
        if len(nz) == 0:
            raise DomainError("xi_{-1}^{12} vanishes identically")
        roots = np.roots(coef[:nz[-1] + 1][::-1])
        if coef[0] == 0 or np.any(np.abs(roots) <= self.epsilon):
            raise DomainError("xi_{-1}^{12} vanishes in the disk of radius epsilon")
        return float(np.min(np.abs(roots)) - self.epsilon) if len(roots) else np.inf

    def z0_over_t(self) -> LaurentPoly:
        """``C_t`` with ``z^0`` coefficient of the perturbation ``= t C_t``."""
        return self.perturbation.table(self.t, "over_t").get(0, LaurentPoly(0, np.zeros((1, 2, 2), complex)))

    def xi_m1_12(self, z):
        """Coefficient of ``lam^-1`` in the upper-right entry of ``xi(z)``."""
        tab = self.perturbation.table(self.t)
        return self.residue.r / z + sum(lp.coeff(-1)[0, 1] * z ** k for k, lp in tab.items())

    def xi_0_21(self, z):
        """Coefficient of ``lam^0`` in the lower-left entry of ``xi(z)``."""
        tab = self.perturbation.table(self.t)
        return self.residue.s / z + sum(lp.coeff(0)[1, 0] * z ** k for k, lp in tab.items())

    def evaluator(self, grid: CircleGrid) -> "SpecPotential":
        return SpecPotential(self, grid)

    def to_json(self):
        return {"t": self.t, "branch": self.residue.branch, "epsilon": self.epsilon,
                "perturbation": self.perturbation.to_json()}

    @classmethod
    def from_json(cls, doc, t=None):
        tt = doc["t"] if t is None else t
        if isinstance(tt, (list, tuple)):
            raise DomainError("PotentialSpec.from_json needs a scalar t (got a ladder)")
        pert = PerturbationSpec.from_json(doc.get("perturbation", []), doc.get("epsilon", 0.5))
        return cls(solve_rs(float(tt), doc.get("branch", "spherical")), pert)

    @classmethod
    def load(cls, path, t=None):
        with open(path) as fh:
            return cls.from_json(json.load(fh), t)


def potential_eval(spec: PotentialSpec, z, lam):
    """``A_t(lam)/z + sum c_{k,j}(t) z^k lam^j`` at scalar ``z`` and array ``lam``."""
    z = complex(z)
    if z == 0:
        raise DomainError("the potential has a pole at z = 0")
    if abs(z) >= spec.epsilon:
        raise DomainError(f"|z| = {abs(z)} outside the disk of radius epsilon = {spec.epsilon}")
    lam = np.asarray(lam, dtype=complex)
    out = spec.residue.A_samples(lam) / z
    for k, lp in spec.perturbation.table(spec.t).items():
        out = out + lp(lam) * z ** k
    return out


# ---------------------------------------------------------------------------
# evaluators

class Potential:
    """Grid-bound potential ``z -> xi(z, lam_m)`` (L, 2, 2)."""

    grid: CircleGrid
    residue: DelaunayResidue | None = None
    radius: float = np.inf               # holomorphic on 0 < |z| < radius

    def __call__(self, z) -> np.ndarray:
        raise NotImplementedError

    def check_domain(self, z):
        z = complex(z)
        if z == 0:
            raise DomainError("z = 0 is a pole of the potential")
        if abs(z) >= self.radius:
            raise DomainError(f"|z| = {abs(z):.4g} beyond the potential's radius {self.radius:.4g}")
        return z


class SpecPotential(Potential):
    def __init__(self, spec: PotentialSpec, grid: CircleGrid):
        self.spec = spec
        self.grid = grid
        self.residue = spec.residue
        self.radius = spec.epsilon
        self.A = spec.residue.A_samples(grid.lam)
        tab = spec.perturbation.table(spec.t)
        K = max(tab, default=-1)
        self.Rk = np.zeros((K + 1, grid.L, 2, 2), dtype=complex)
        for k, lp in tab.items():
            self.Rk[k] = lp(grid.lam)
        self._dt = None

    def holo(self, z):
        out = np.zeros((self.grid.L, 2, 2), dtype=complex)
        for k in range(len(self.Rk) - 1, -1, -1):
            out = out * z + self.Rk[k]
        return out

    def __call__(self, z):
        z = self.check_domain(z)
        return self.A / z + self.holo(z)

    def dt(self, z):
        """``d xi / dt`` (analytic, from r'(t), s'(t) and the t-polynomials)."""
        if self._dt is None:
            dr, ds = self.residue.drds_dt()
            dA = np.zeros_like(self.A)
            dA[:, 0, 1] = dr / self.grid.lam + ds
            dA[:, 1, 0] = dr * self.grid.lam + ds
            tab = self.spec.perturbation.table(self.spec.t, "dt")
            K = max(tab, default=-1)
            dR = np.zeros((K + 1, self.grid.L, 2, 2), dtype=complex)
            for k, lp in tab.items():
                dR[k] = lp(self.grid.lam)
            self._dt = (dA, dR)
        dA, dR = self._dt
        z = complex(z)
        out = np.zeros((self.grid.L, 2, 2), dtype=complex)
        for k in range(len(dR) - 1, -1, -1):
            out = out * z + dR[k]
        return dA / z + out


class ConstantPotential(Potential):
    """``xi = C dz`` with a z-independent loop ``C`` (no residue)."""

    def __init__(self, grid: CircleGrid, C):
        self.grid = grid
        self.C = np.broadcast_to(np.asarray(C, dtype=complex), (grid.L, 2, 2)).copy()

    def __call__(self, z):
        return self.C


class CallablePotential(Potential):
    def __init__(self, grid, fn: Callable, residue=None, radius=np.inf):
        self.grid, self.fn, self.residue, self.radius = grid, fn, residue, radius

    def __call__(self, z):
        return self.fn(self.check_domain(z))


# ---------------------------------------------------------------------------
# gauges and Moebius maps

def cauchy_derivative(fn, z, h, m=16):
    """``f'(z)`` of a holomorphic matrix function by the trapezoidal Cauchy integral."""
    w = np.exp(2j * np.pi * np.arange(m) / m)
    acc = 0
    for wj in w:
        acc = acc + fn(z + h * wj) / wj
    return acc / (m * h)


class Gauge:
    """z-holomorphic plus-loop ``G(z, lam)``; ``deriv`` falls back to a Cauchy integral."""

    grid: CircleGrid

    def value(self, z):
        raise NotImplementedError

    def deriv(self, z):
        return cauchy_derivative(self.value, z, 0.25 * max(abs(z), 1e-3))

    def __call__(self, z):
        return self.value(z)


class ExpGauge(Gauge):
    """``G = exp(g(lam) z)`` for a trace-free plus-loop ``g``."""

    def __init__(self, grid, g_samples):
        self.grid = grid
        self.g = np.asarray(g_samples, dtype=complex)

    def value(self, z):
        return expm_traceless(self.g * z)

    def deriv(self, z):
        return self.g @ self.value(z)


class FunctionGauge(Gauge):
    def __init__(self, grid, fn, dfn=None):
        self.grid, self.fn, self.dfn = grid, fn, dfn

    def value(self, z):
        return self.fn(z)

    def deriv(self, z):
        if self.dfn is None:
            return super().deriv(z)
        return self.dfn(z)


class ConstantGauge(Gauge):
    def __init__(self, grid, G):
        self.grid = grid
        self.G = np.broadcast_to(np.asarray(G, dtype=complex), (grid.L, 2, 2)).copy()

    def value(self, z):
        return self.G

    def deriv(self, z):
        return np.zeros_like(self.G)


class ProductGauge(Gauge):
    def __init__(self, G1: Gauge, G2: Gauge):
        self.grid, self.G1, self.G2 = G1.grid, G1, G2

    def value(self, z):
        return self.G1.value(z) @ self.G2.value(z)

    def deriv(self, z):
        return self.G1.deriv(z) @ self.G2.value(z) + self.G1.value(z) @ self.G2.deriv(z)


class GaugedPotential(Potential):
    """``xi . G = G^{-1} xi G + G^{-1} dG``."""

    def __init__(self, base: Potential, gauge: Gauge):
        self.base, self.gauge = base, gauge
        self.grid = base.grid
        self.residue = base.residue
        self.radius = base.radius

    def __call__(self, z):
        G = self.gauge.value(z)
        d = det2(G)
        if np.any(np.abs(d) < 1e-14):
            raise DomainError("gauge is not invertible at this z")
        Gi = inv2(G)
        return Gi @ self.base(z) @ G + Gi @ self.gauge.deriv(z)


def gauge_action(xi: Potential, G: Gauge) -> Potential:
    return GaugedPotential(xi, G)


@dataclass(frozen=True)
class MobiusMap:
    p: complex = 0.0
    q: complex = 1.0

    def __post_init__(self):
        if self.q == 0:
            raise DomainError("Moebius map needs q != 0")

    @property
    def pole_radius(self):
        return np.inf if self.p == 0 else abs(self.q) / abs(self.p)

    def check(self, z):
        if abs(z) >= self.pole_radius:
            raise DomainError(f"|z| = {abs(z):.4g} at or beyond the Moebius pole radius {self.pole_radius:.4g}")

    def __call__(self, z):
        self.check(z)
        return z / (self.p * z + self.q)

    def deriv(self, z):
        return self.q / (self.p * z + self.q) ** 2

    def inverse(self, w):
        return self.q * w / (1 - self.p * w)


class PullbackPotential(Potential):
    """``(h^* xi)(w) = xi(h(w)) h'(w)``."""

    def __init__(self, base: Potential, h: MobiusMap):
        self.base, self.h = base, h
        self.grid = base.grid
        self.residue = base.residue
        self.radius = min(h.pole_radius, _preimage_radius(h, base.radius))

    def __call__(self, w):
        w = self.check_domain(w)
        return self.base(self.h(w)) * self.h.deriv(w)


def _preimage_radius(h: MobiusMap, radius):
    """Largest r with |h(w)| < radius on |w| < r (conservative)."""
    if not np.isfinite(radius):
        return np.inf
    if h.p == 0:
        return radius * abs(h.q)
    # |h(w)| <= |w| / (|q| - |p||w|) < radius  <=>  |w| < radius |q| / (1 + radius |p|)
    return radius * abs(h.q) / (1 + radius * abs(h.p))


def mobius_pullback(xi: Potential, h: MobiusMap) -> Potential:
    return PullbackPotential(xi, h)


def laurent_in_z(xi: Potential, K: int, radius: float, nz: int = 64):
    """Residue and Taylor coefficients of ``xi`` around ``z = 0``.

    Returns an array ``(K + 2, L, 2, 2)``: entry 0 is the residue, entry ``n + 1``
    is the coefficient of ``z^n`` of the holomorphic part.  Computed from the FFT of
    ``z xi(z)`` on the circle ``|z| = radius``.
    """
    if K + 2 > nz // 2:
        raise DomainError("need nz > 2 (K + 2) samples on the z-circle")
    zs = radius * np.exp(2j * np.pi * np.arange(nz) / nz)
    vals = np.stack([z * xi(z) for z in zs])
    c = np.fft.fft(vals, axis=0) / nz
    scale = radius ** (-np.arange(K + 2, dtype=float))
    return c[:K + 2] * scale[:, None, None, None]


# ---------------------------------------------------------------------------
# p_t and the regularizing gauge

def compute_pt(spec: PotentialSpec):
    """``p_t = (s c12(t,0) + r c21(t,0)) / 2`` from the ``z^0`` coefficient ``t C_t``."""
    C = spec.z0_over_t()
    if np.any(np.abs(C.coeff(-1)[[0, 1, 1], [0, 0, 1]]) > 0):
        raise DomainError("z^0 coefficient: lam^-1 allowed only in the upper-right entry")
    c12 = C.coeff(-1)[0, 1]
    c21 = C.coeff(0)[1, 0]
    p = 0.5 * (spec.residue.s * c12 + spec.residue.r * c21)
    return complex(p)


def _scalar(v):
    v = complex(v)
    return v.real if abs(v.imag) < 1e-15 * max(1.0, abs(v)) else v


@dataclass
class RegularizingGauge:
    p_t: complex
    P_t1: LaurentPoly
    g: LaurentPoly
    G: ExpGauge
    h: MobiusMap
    diagnostics: dict


def build_regularizing_gauge(spec: PotentialSpec, grid: CircleGrid, reg_tol=REG_TOL,
                             check_range=True) -> RegularizingGauge:
    """``G_t = exp(g_t z)`` with ``g_t = p_t A_t - P_{t,1}`` and ``h_t(z) = z / (1 + p_t z)``.

    ``P_{t,1} = t C - t (1 - 4 mu^2)^{-1} (I - 2A)[A, C]`` and ``t / (1 - 4 mu^2) =
    -lam / (4 (lam - 1)^2)``, so ``P_{t,1} = t C + lam K / (4 (lam - 1)^2)`` with
    ``K = (I - 2A)[A, C]``.  ``K`` must vanish to second order at ``lam = 1``; the
    remainder of the exact division is the resonance diagnostic.
    """
    res = spec.residue
    diag = {}
    if check_range:
        diag["remark_range"] = check_remark_range(res, grid)
    p_t = compute_pt(spec)
    C = spec.z0_over_t()
    A = res.A_laurent()
    IA = I_laurent() - A.scale(2)
    K = IA @ (A @ C - C @ A)
    quot, rem = K.div_lam_minus_one_squared()
    scale = max(1.0, K.norm())
    diag["resonance_residual"] = max(rem) / scale
    if diag["resonance_residual"] > reg_tol:
        raise ResonanceError(
            f"(I - 2A)[A, C] does not vanish to second order at lam = 1 (residual "
            f"{diag['resonance_residual']:.2e}): monodromy hypothesis likely violated")
    P1 = C.scale(spec.t) + quot.shift(1).scale(0.25)
    g = A.scale(p_t) - P1
    lm1 = g.coeff(-1) if g.lo <= -1 else np.zeros((2, 2))
    diag["g_lam_m1"] = float(np.max(np.abs(lm1)))
    diag["g_lower_left_0"] = float(abs(g.coeff(0)[1, 0]))
    diag["P1_lam_m1_vs_rpt"] = float(np.max(np.abs(P1.coeff(-1) - np.array([[0, res.r * p_t], [0, 0]]))))
    diag["P1_ll0_vs_spt"] = float(abs(P1.coeff(0)[1, 0] - res.s * p_t))
    gscale = max(1.0, g.norm())
    if diag["g_lam_m1"] > reg_tol * gscale or diag["g_lower_left_0"] > reg_tol * gscale:
        raise ResonanceError(
            f"g_t is not a plus-loop in Lambda_+ sl2 (lam^-1 part {diag['g_lam_m1']:.2e}, "
            f"lower-left lam^0 entry {diag['g_lower_left_0']:.2e})")
    # drop the (round-off level) lam^-1 part so g is exactly a plus-loop
    if g.lo < 0:
        g = LaurentPoly(0, g.c[-g.lo:].copy())
    G = ExpGauge(grid, g(grid.lam))
    h = MobiusMap(_scalar(p_t), 1.0)
    return RegularizingGauge(_scalar(p_t), P1, g, G, h, diag)


def regularized_potential(spec: PotentialSpec, grid: CircleGrid, reg: RegularizingGauge | None = None):
    """``h_t^* (xi_t . G_t)``, a potential with residue ``A_t`` and vanishing ``z^0`` term."""
    reg = reg or build_regularizing_gauge(spec, grid)
    xi = spec.evaluator(grid)
    return PullbackPotential(GaugedPotential(xi, reg.G), reg.h), reg


# ---------------------------------------------------------------------------
# initial frame normalization

@dataclass
class InitialNormalization:
    rho: float
    mu: complex
    h: MobiusMap
    G: FunctionGauge
    Q: LoopMatrix
    residual: float                      # || Phi~_0(1) - Q H^{-1} ||
    unitarity: float                     # || Phi~_0(1) Phi~_0(1)^* - I ||


def normalize_initial_frame(a, b, c, d, grid: CircleGrid, tol=1e-10) -> InitialNormalization:
    """Moebius map and gauge making ``Phi~_0(1, .)`` unitary when ``Phi_0(1) = [[a, b/lam], [c lam, d]]``."""
    if abs(a * d - b * c - 1) > tol:
        raise DomainError(f"ad - bc = {a * d - b * c}, expected 1")
    n2 = abs(b - a) ** 2 + abs(d - c) ** 2
    if n2 == 0:
        raise DomainError("b = a and d = c: rho is undefined")
    rho = math.sqrt(2) / math.sqrt(n2)
    mu = ((a + b) * np.conj(b - a) + (c + d) * np.conj(d - c)) / (math.sqrt(2) * math.sqrt(n2))
    p, q = _scalar(-rho * mu), rho ** 2
    h = MobiusMap(p, q)
    lam = grid.lam

    def G(z):
        u = complex(p * z + q)
        out = np.zeros((grid.L, 2, 2), dtype=complex)
        out[:, 0, 0] = np.sqrt(q / u)
        out[:, 1, 1] = np.sqrt(u / q)
        out[:, 1, 0] = lam * p * z / np.sqrt(q * u)
        return out

    def dG(z):
        u = complex(p * z + q)
        out = np.zeros((grid.L, 2, 2), dtype=complex)
        out[:, 0, 0] = -0.5 * p * np.sqrt(q) * u ** -1.5
        out[:, 1, 1] = 0.5 * p / (np.sqrt(q) * np.sqrt(u))
        out[:, 1, 0] = lam * p * ((q * u) ** -0.5 - 0.5 * z * p * q * (q * u) ** -1.5)
        return out

    s2 = 1 / math.sqrt(2)
    Q = explicit_iwasawa_hat(s2 * (a + b), s2 * (b - a), s2 * (c + d), s2 * (d - c), grid).F
    # Phi~_0(1) = M H (h(1)^D H^{-1} G(1) H) H^{-1}
    H = hmatrix(grid).samples
    Hi = inv2(H)
    # h(1) = 1/(p + q), taken on the square-root branch used by G (no domain check: only
    # the algebraic identity is needed at z = 1)
    u1 = np.sqrt(complex(p + q))
    hD = np.diag([1 / u1, u1])
    M = hat_loop(a, b, c, d, grid).samples
    Phi1 = M @ H @ (hD @ Hi @ G(1.0) @ H) @ Hi
    resid = float(np.max(opnorm2(Phi1 - Q.samples @ Hi)))
    unit = float(np.max(opnorm2(Phi1 @ dag(Phi1) - I2)))
    return InitialNormalization(rho, complex(mu), h, FunctionGauge(grid, G, dG), Q, resid, unit)
