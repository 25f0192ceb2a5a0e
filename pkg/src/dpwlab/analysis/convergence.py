"""Convergence of a perturbed end to its Delaunay model.

For each ``t`` the potential is regularized (``xi~ = h^*(xi . G)``) and the
``z^A P`` series of ``xi~`` provides the normalized frame ``Phi~ = w^A P(w)``.  The
perturbed frame is then integrated from the *original* potential,

    Phi(z) = Phi~(h^{-1}(z)) G(z)^{-1},

and compared at ``z = h(w)`` with the model ``Phi^D(w) = M w^A``, where ``M`` is
recovered from the integrated frame at two fit radii.  Since the gauge does not
change the immersion, ``f(h(w))`` is the immersion of ``Phi~`` at ``w``.  All
ladder radii are radii in the ``w`` coordinate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DPWError
from ..frame import CoverPoint, ZapForm, frobenius_series, ode_solve_frame, z_pow_A_samples, ODE_TOL
from ..loopalg import CircleGrid, inv2
from ..parallel import pmap
from ..potential import PotentialSpec, RegularizingGauge, regularized_potential
from ..surface import surface_from_frames

log = logging.getLogger(__name__)

FLOOR = 1e-7


@dataclass
class PerturbedEnd:
    """Regularized data of one member ``xi_t`` of a perturbed family."""

    spec: PotentialSpec
    grid: CircleGrid
    reg: RegularizingGauge
    zap: ZapForm
    xi: object
    info: dict = field(default_factory=dict)

    def z_of_w(self, wc: CoverPoint) -> CoverPoint:
        """Cover point of ``z = h(w) = w / (1 + p w)``, continuing the argument of ``w``."""
        h = self.reg.h
        lz = wc.log - np.log(h.p * wc.z + h.q)
        return CoverPoint(float(lz.real), float(lz.imag))

    def normalized_from_original(self, Phi, zc: CoverPoint):
        """``Phi~(w) = Phi(z) G(z)``."""
        return Phi @ self.reg.G.value(zc.z)

    def original_from_normalized(self, Phit, zc: CoverPoint):
        return Phit @ inv2(self.reg.G.value(zc.z))

    def ode_frames(self, w_start: CoverPoint, w_points, ode_tol=ODE_TOL, Phit_start=None):
        """Normalized frames ``Phi~`` at ``w_points``, integrating the original potential in z.

        The start value is ``Phit_start`` or, by default, the series ``w^A P(w)`` at ``w_start``.
        """
        zs = self.z_of_w(w_start)
        if Phit_start is None:
            Phit_start = self.zap.frame_samples(w_start.log, with_M=False)
        Phi0 = self.original_from_normalized(Phit_start, zs)
        zpath = [self.z_of_w(w) for w in w_points]
        fp = ode_solve_frame(self.xi, zs, Phi0, zpath, ode_tol)
        self.info["det_drift"] = max(fp.det_drift, default=0.0)
        return [self.normalized_from_original(F.samples, zc) for F, zc in zip(fp.frames, zpath)]


def build_perturbed_end(spec: PotentialSpec, grid: CircleGrid, K=24, series_radius=0.25,
                        w_start=0.1, w_fit=(0.1, 0.05), arg=0.7, ode_tol=ODE_TOL,
                        fit=True) -> PerturbedEnd:
    xt, reg = regularized_potential(spec, grid)
    radius = min(series_radius, 0.5 * xt.radius)
    zap = frobenius_series(xt, K, radius=radius)
    end = PerturbedEnd(spec, grid, reg, zap, spec.evaluator(grid))
    if fit:
        ws = CoverPoint(math.log(w_start), arg)
        inner = [CoverPoint(math.log(w), arg) for w in sorted(w_fit, reverse=True) if w < w_start]
        frames = dict(zip(inner, end.ode_frames(ws, inner, ode_tol))) if inner else {}
        if any(abs(w - w_start) <= 1e-12 * w_start for w in w_fit):
            frames[ws] = zap.frame_samples(ws.log, with_M=False)
        _, spread = zap.fit_M(frames)
        end.info["M_fit_spread"] = spread
    return end


@dataclass
class ConvergenceReport:
    t_ladder: list
    z_ladder: list
    errors: np.ndarray                   # (nt, nz), immersion mode
    errors_normal: np.ndarray            # (nt, nz), normal mode
    fitted_alpha: float | None
    fitted_C: float | None
    fitted_t_slope: float | None
    fit_residual: float | None
    alpha_normal: float | None = None
    t_slope_normal: float | None = None
    C_normal: float | None = None
    slopes_z: list = field(default_factory=list)          # per t (immersion)
    slopes_t: list = field(default_factory=list)          # per z (immersion)
    slopes_z_normal: list = field(default_factory=list)
    slopes_t_normal: list = field(default_factory=list)
    masked: int = 0
    info: dict = field(default_factory=dict)

    def rows(self):
        """CSV rows ``(t, |z|, error, mode)``."""
        out = []
        for i, t in enumerate(self.t_ladder):
            for j, z in enumerate(self.z_ladder):
                out.append((t, z, float(self.errors[i, j]), "immersion"))
                out.append((t, z, float(self.errors_normal[i, j]), "normal"))
        return out

    def to_json(self):
        def f(x):
            return None if x is None else float(x)
        return {
            "t_ladder": [float(t) for t in self.t_ladder],
            "z_ladder": [float(z) for z in self.z_ladder],
            "immersion": {"alpha": f(self.fitted_alpha), "t_slope": f(self.fitted_t_slope),
                          "C": f(self.fitted_C), "fit_residual": f(self.fit_residual),
                          "slopes_z": [f(s) for s in self.slopes_z],
                          "slopes_t": [f(s) for s in self.slopes_t]},
            "normal": {"alpha": f(self.alpha_normal), "t_slope": f(self.t_slope_normal),
                       "C": f(self.C_normal),
                       "slopes_z": [f(s) for s in self.slopes_z_normal],
                       "slopes_t": [f(s) for s in self.slopes_t_normal]},
            "masked": int(self.masked),
            "info": self.info,
        }


def _slope(x, y):
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(np.asarray(x)[ok]), np.log(y[ok]), 1)[0])


def fit_rates(t_ladder, z_ladder, E, floor=FLOOR):
    """Joint fit ``log e = log C + alpha log|z| + beta log|t|`` plus per-row / per-column slopes."""
    T, Z = np.meshgrid(np.abs(t_ladder), z_ladder, indexing="ij")
    ok = np.isfinite(E) & (E > floor) & (T > 0)
    per_z = [_slope(z_ladder, E[i]) for i in range(E.shape[0])]
    per_t = [_slope(np.abs(t_ladder), E[:, j]) if np.all(np.abs(t_ladder) > 0) else None
             for j in range(E.shape[1])]
    if ok.sum() < 4:
        return None, None, None, None, per_z, per_t
    X = np.column_stack([np.ones(ok.sum()), np.log(Z[ok]), np.log(T[ok])])
    coef, *_ = np.linalg.lstsq(X, np.log(E[ok]), rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - np.log(E[ok])) ** 2)))
    return float(coef[1]), float(np.exp(coef[0])), float(coef[2]), resid, per_z, per_t


def _one_t(args):
    spec, t, z_ladder, grid, arg, ode_tol, K = args
    nz = len(z_ladder)
    out_f = np.full(nz, np.nan)
    out_n = np.full(nz, np.nan)
    info = {"t": float(t)}
    try:
        sp = spec.with_t(t)
        w_start = max(max(z_ladder), 0.1)
        end = build_perturbed_end(sp, grid, K=K, w_start=w_start, arg=arg, ode_tol=ode_tol, fit=False)
        ws = CoverPoint(math.log(w_start), arg)
        radii = sorted(set(list(z_ladder) + [0.05]) - {w_start}, reverse=True)
        pts = [CoverPoint(math.log(w), arg) for w in radii]
        frames = dict(zip(pts, end.ode_frames(ws, pts, ode_tol)))
        frames[ws] = end.zap.frame_samples(ws.log, with_M=False)
        fit = {wc: frames[wc] for wc in frames
               if any(abs(wc.abs - w) < 1e-12 * w for w in (w_start, 0.05))}
        end.zap.fit_M(fit)
        info.update(p_t=abs(end.reg.p_t), M_fit_spread=end.zap.info["M_fit_spread"],
                    resonance_residual=end.reg.diagnostics["resonance_residual"],
                    det_drift=end.info.get("det_drift", 0.0))
        order = [next(wc for wc in frames if abs(wc.abs - z) < 1e-12 * z) for z in z_ladder]
        Phi = np.stack([frames[wc] for wc in order])
        PhiD = np.stack([end.zap.model_samples(wc.log) for wc in order])
        sb = surface_from_frames(Phi)
        sd = surface_from_frames(PhiD)
        out_f = np.linalg.norm(sb.f - sd.f, axis=-1)
        out_n = np.linalg.norm(sb.N - sd.N, axis=-1)
        info["iwasawa_unitarity"] = float(max(np.max(sb.diag["unitarity"]), np.max(sd.diag["unitarity"])))
    except DPWError as exc:
        log.warning("convergence cell t=%g failed: %s", t, exc)
        info["error"] = str(exc)
    return out_f, out_n, info


def convergence_experiment(spec: PotentialSpec, t_ladder, z_ladder, mode="both", grid=None,
                           arg=0.7, ode_tol=1e-11, K=24, threads=None, floor=FLOOR,
                           control=True, noise_factor=30.0) -> ConvergenceReport:
    """Errors ``|f_t(w) - f_t^D(w)|`` and ``|N_t - N_t^D|`` over the (t, |w|) ladder, with fitted rates.

    With ``control`` the same cells are run for the unperturbed potential; its
    errors measure the numerical floor of each cell, and cells below
    ``noise_factor`` times that floor are excluded from the fits.
    """
    grid = grid or CircleGrid()
    t_ladder = [float(t) for t in t_ladder]
    z_ladder = sorted(float(z) for z in z_ladder)
    jobs = [(spec, t, z_ladder, grid, arg, ode_tol, K) for t in t_ladder]
    results = pmap(_one_t, jobs, threads)
    E = np.array([r[0] for r in results])
    En = np.array([r[1] for r in results])
    masked = int(np.sum(~np.isfinite(E)))
    info = {"cells": [r[2] for r in results], "L": grid.L, "N": grid.N, "ode_tol": ode_tol,
            "K": K, "arg": arg, "mode": mode}
    finite = E[np.isfinite(E)]
    if spec.perturbation.is_zero or finite.size == 0 or bool(np.all(finite <= floor)):
        info["fit"] = "skipped: all errors at or below the numerical floor"
        return ConvergenceReport(t_ladder, z_ladder, E, En, None, None, None, None, masked=masked, info=info)
    Ef, Enf = E.copy(), En.copy()
    if control:
        base = PotentialSpec(spec.residue, type(spec.perturbation)((), spec.epsilon))
        ctrl = pmap(_one_t, [(base, t, z_ladder, grid, arg, ode_tol, K) for t in t_ladder], threads)
        F0 = np.array([r[0] for r in ctrl])
        F0n = np.array([r[1] for r in ctrl])
        # the floor is a property of the radius (conditioning grows as |w| -> 0): take the
        # worst control error over the t-ladder in each column
        F0 = np.broadcast_to(np.nanmax(F0, axis=0), E.shape)
        F0n = np.broadcast_to(np.nanmax(F0n, axis=0), E.shape)
        Ef[~(E > noise_factor * F0)] = np.nan
        Enf[~(En > noise_factor * F0n)] = np.nan
        info["floor_max"] = float(np.nanmax(F0))
        info["floor_max_normal"] = float(np.nanmax(F0n))
        info["floor_z"] = [float(x) for x in F0[0]]
        info["floor_z_normal"] = [float(x) for x in F0n[0]]
        info["noise_factor"] = float(noise_factor)
    info["below_floor"] = int(np.sum(~np.isfinite(Ef)) - masked)
    info["below_floor_normal"] = int(np.sum(~np.isfinite(Enf)) - masked)
    a, C, b, res, pz, pt = fit_rates(t_ladder, z_ladder, Ef, floor=0.0)
    an, Cn, bn, _, pzn, ptn = fit_rates(t_ladder, z_ladder, Enf, floor=0.0)
    log.info("convergence fit: alpha=%.4f t-slope=%.4f C=%.4g (normal: %.4f, %.4f)",
             a if a is not None else np.nan, b if b is not None else np.nan,
             C if C is not None else np.nan, an if an is not None else np.nan,
             bn if bn is not None else np.nan)
    return ConvergenceReport(t_ladder, z_ladder, E, En, a, C, b, res, an, bn, Cn,
                             pz, pt, pzn, ptn, masked, info)
