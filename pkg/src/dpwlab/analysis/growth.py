"""Growth of the unitary frame on the annulus A_R along a path, against the Gronwall bound

    ||F(z1)||_{A_R} <= C ||F(z2)||_{A_R} exp((R - 1)/2 |gamma|),

with ``|gamma|`` the length of the path in the induced metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..frame import CoverPoint, ode_solve_frame, ODE_TOL
from ..iwasawa import iwasawa_samples
from ..loopalg import LoopMatrix, coeffs_from_samples, sup_norm_radius
from ..potential import Potential

C_DEFAULT = 1.5


@dataclass
class GrowthReport:
    R: float
    C: float
    length: float
    norm_start: float
    norm_end: float
    bound_forward: float      # C ||F(z2)|| exp(...), compared with ||F(z1)||
    bound_backward: float
    margin: float             # min relative slack of both directions
    passed: bool
    info: dict = field(default_factory=dict)

    def to_json(self):
        return {k: getattr(self, k) for k in
                ("R", "C", "length", "norm_start", "norm_end", "bound_forward",
                 "bound_backward", "margin", "passed", "info")}


def annulus_norm(F, R):
    """``sup_{A_R} ||F||`` from the Laurent coefficients (max over ``|lam| = R, 1/R``; subharmonic)."""
    if not isinstance(F, LoopMatrix):
        raise TypeError("annulus_norm expects a LoopMatrix")
    return max(sup_norm_radius(F, R), sup_norm_radius(F, 1.0 / R))


def metric_density_samples(xi: Potential, zs, rho):
    """``2 rho^2 |xi_{-1}^{12}(z)|`` with the lam^{-1} coefficient extracted by FFT."""
    out = np.empty(len(zs))
    for i, z in enumerate(zs):
        c = coeffs_from_samples(xi(z))
        out[i] = 2 * rho[i] ** 2 * abs(c[-1, 0, 1])
    return out


def frame_growth_check(xi: Potential, start: CoverPoint, Phi_start, path: Sequence[CoverPoint],
                       R=1.05, C=C_DEFAULT, n_gauss=8, ode_tol=ODE_TOL) -> GrowthReport:
    """Integrate the frame along the piecewise-straight path (in log z), measure its metric
    length by Gauss-Legendre quadrature on each piece and compare the A_R norms of the
    unitary factors at both endpoints, in both directions.
    """
    grid = xi.grid
    x, wts = np.polynomial.legendre.leggauss(n_gauss)
    x = 0.5 * (x + 1)
    wts = 0.5 * wts
    pts = [start] + list(path)
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        ds = b.log - a.log
        for xi_, wi in zip(x, wts):
            s = a.log + xi_ * ds
            nodes.append(CoverPoint(float(s.real), float(s.imag)))
            # |dz| = |z| |ds|
            weights.append(wi * abs(ds) * math.exp(s.real))
    # waypoints: quadrature nodes interleaved with the path corners
    order, waypoints = [], []
    k = 0
    for j, b in enumerate(pts[1:]):
        for _ in range(n_gauss):
            order.append(len(waypoints))
            waypoints.append(nodes[k])
            k += 1
        waypoints.append(b)
    fp = ode_solve_frame(xi, start, Phi_start, waypoints, ode_tol)
    S = np.stack([f.samples for f in fp.frames])
    Phi0 = Phi_start.samples if isinstance(Phi_start, LoopMatrix) else np.broadcast_to(Phi_start, (grid.L, 2, 2))
    F, _, b0, _ = iwasawa_samples(np.concatenate([np.asarray(Phi0)[None], S]))
    rho = np.real(b0[1:, 0, 0])[order]
    dens = metric_density_samples(xi, [p.z for p in nodes], rho)
    length = float(np.sum(dens * np.asarray(weights)))
    n1 = annulus_norm(LoopMatrix(grid, F[0]), R)
    n2 = annulus_norm(LoopMatrix(grid, F[-1]), R)
    g = math.exp((R - 1) / 2 * length)
    bf = C * n2 * g
    bb = C * n1 * g
    margin = min((bf - n1) / bf, (bb - n2) / bb)
    return GrowthReport(float(R), float(C), length, n1, n2, bf, bb, float(margin), bool(margin > 0),
                        {"nodes": len(nodes), "ode_tol": ode_tol, "nfev": fp.nfev})
