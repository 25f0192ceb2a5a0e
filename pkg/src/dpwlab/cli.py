"""Command-line front end: ``dpwlab <command> --config <path> [--out <dir>] [--threads <n>]``.

Exit codes: 0 success, 1 invalid config or domain error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .analysis.convergence import build_perturbed_end, convergence_experiment
from .analysis.embedding import (
    annulus_mesh, embeddedness_check, fit_axis, model_mesh, perturbed_mesh,
)
from .errors import DomainError, DPWError, MeshTooCoarseError
from .export import export_csv, export_json, export_mesh, export_report  # noqa: F401
from .frame import (
    ODE_TOL, CoverPoint, check_monodromy_problem, delaunay_monodromy, monodromy,
    monodromy_derivative,
)
from .loopalg import CircleGrid, LoopMatrix, inv2, opnorm2
from .parallel import resolve_threads
from .potential import PotentialSpec, remark_range_residual
from .surface import delaunay_axis, distance_to_line

log = logging.getLogger("dpwlab")

COMMANDS = ("delaunay", "perturbed", "convergence", "embeddedness", "monodromy")

MESH_DEFAULTS = {
    "delaunay": {"n_r": 24, "n_theta": 48, "epsilon": 1.0, "z_min": 0.2},
    "perturbed": {"n_r": 24, "n_theta": 48, "epsilon": 0.1, "z_min": 0.01},
    "embeddedness": {"n_r": 56, "n_theta": 180, "epsilon": 0.1, "z_min": 0.01},
}


class ConfigError(Exception):
    pass


def load_schema():
    return json.loads(resources.files("dpwlab").joinpath("data/config.schema.json").read_text())


def load_config(path, command=None):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    if command is not None and cfg.get("command", command) != command:
        raise ConfigError(f"config is for command {cfg['command']!r}, not {command!r}")
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def bundled_spec_path(name):
    return resources.files("dpwlab").joinpath(f"data/{name}.json")


def make_spec(cfg) -> PotentialSpec:
    p = dict(cfg.get("potential", {}))
    t = p.get("t")
    if "bundled" in p:
        doc = json.loads(bundled_spec_path(p["bundled"]).read_text())
    elif "file" in p:
        fp = Path(p["file"])
        doc = json.loads((fp if fp.is_absolute() else Path(cfg["_base"]) / fp).read_text())
    else:
        if t is None:
            raise ConfigError("potential needs 't' (or 'bundled' / 'file')")
        doc = {"t": t, "branch": p.get("branch", "spherical"),
               "epsilon": p.get("epsilon", math.inf), "perturbation": p.get("perturbation", [])}
    for key in ("branch", "epsilon"):
        if key in p and ("bundled" in p or "file" in p):
            doc[key] = p[key]
    spec = PotentialSpec.from_json(doc, t)
    if spec.t != 0:
        spec.check_nondegenerate()
    return spec


def make_grid(cfg) -> CircleGrid:
    g = cfg.get("grid", {})
    L = g.get("L", 256)
    kw = {"L": L, "N": g.get("N", min(64, L // 2))}
    if "annulus_R" in g:
        kw["annulus_R"] = g["annulus_R"]
    if "tail_tol" in g:
        kw["tail_tol"] = g["tail_tol"]
    return CircleGrid(**kw)


def _mesh_params(cfg, command):
    m = dict(MESH_DEFAULTS[command])
    m.update(cfg.get("mesh", {}))
    return m


def _tol(cfg, key, default):
    return cfg.get("tolerances", {}).get(key, default)


def _monodromy_report(M: LoopMatrix, label):
    rep = check_monodromy_problem(M)
    log.info("monodromy problem (%s): unitarity %.2e, M(1) = %+d I residual %.2e, dM/dlam(1) %.2e",
             label, rep["unitary"], int(rep["sign"]), rep["at_one"], rep["deriv_at_one"])
    return rep


def _log_grid(grid, ode_tol):
    log.info("grid L=%d N=%d annulus_R=%g ode_tol=%g", grid.L, grid.N, grid.annulus_R, ode_tol)


def _log_range(spec, grid, fatal):
    worst = remark_range_residual(spec.residue, grid)
    ok = worst < 0.25
    log.info("remark range: max |mu^2 - 1/4| = %.4f on the annulus (%s)", worst, "ok" if ok else "VIOLATED")
    if not ok and fatal:
        raise DomainError(f"|mu^2 - 1/4| reaches {worst:.4f} >= 1/4 on the annulus; lower |t| or annulus_R")
    return {"max_abs_mu2_minus_quarter": worst, "ok": ok}


def _outputs(cfg, command):
    o = {"stem": command, "obj": True, "csv": True, "json": True}
    o.update(cfg.get("outputs", {}))
    return o


def _end_report(end):
    d = dict(end.reg.diagnostics)
    return {"p_t": end.reg.p_t, "regularization": d, "M_fit_spread": end.info.get("M_fit_spread")}


# ---------------------------------------------------------------------------
# commands

def cmd_delaunay(cfg, out, threads):
    spec = make_spec(cfg)
    grid = make_grid(cfg)
    ode_tol = _tol(cfg, "ode_tol", ODE_TOL)
    _log_grid(grid, ode_tol)
    res = spec.residue
    rng = _log_range(spec, grid, fatal=False)
    mono = _monodromy_report(delaunay_monodromy(res, grid), "exp(2 pi i A)")
    m = _mesh_params(cfg, "delaunay")
    radii, th = annulus_mesh(m["epsilon"], m["z_min"], m["n_r"], m["n_theta"])
    mesh = model_mesh(res, grid, radii, th)
    p, v = delaunay_axis(res)
    dist = distance_to_line(mesh.vertices, p, v)
    fp, fv = fit_axis(mesh)
    report = {
        "command": "delaunay",
        "residue": {"t": res.t, "r": res.r, "s": res.s, "branch": res.branch},
        "grid": {"L": grid.L, "N": grid.N, "annulus_R": grid.annulus_R},
        "remark_range": rng,
        "monodromy_problem": mono,
        "axis": {"point": p, "direction": v, "fitted_point": fp, "fitted_direction": fv},
        "radius": {"mean": float(dist.mean()), "min": float(dist.min()), "max": float(dist.max())},
        "mesh": {"n_r": m["n_r"], "n_theta": m["n_theta"], "epsilon": m["epsilon"], "z_min": m["z_min"]},
    }
    log.info("axis (x, 0, %.6g) direction e1; distance to axis in [%.6g, %.6g]",
             p[2], dist.min(), dist.max())
    return report, mesh, None


def cmd_perturbed(cfg, out, threads):
    spec = make_spec(cfg)
    grid = make_grid(cfg)
    ode_tol = _tol(cfg, "ode_tol", ODE_TOL)
    _log_grid(grid, ode_tol)
    rng = _log_range(spec, grid, fatal=True)
    s = cfg.get("series", {})
    end = build_perturbed_end(spec, grid, K=s.get("K", 24), series_radius=s.get("radius", 0.25),
                              ode_tol=ode_tol)
    log.info("resonance diagnostic %.2e; p_t = %s; M fit spread %.2e",
             end.reg.diagnostics["resonance_residual"], end.reg.p_t, end.info.get("M_fit_spread", 0.0))
    Mt = end.zap.M.samples
    mono = _monodromy_report(LoopMatrix(grid, Mt @ delaunay_monodromy(spec.residue, grid).samples @ inv2(Mt)),
                             "normalized frame")
    m = _mesh_params(cfg, "perturbed")
    radii, th = annulus_mesh(m["epsilon"], m["z_min"], m["n_r"], m["n_theta"])
    per = perturbed_mesh(end, radii, th, m.get("method", "series"), ode_tol)
    mod = model_mesh(spec.residue, grid, radii, th)
    dev = np.linalg.norm(per.f - mod.f, axis=-1)
    report = {
        "command": "perturbed", "potential": spec.to_json(),
        "grid": {"L": grid.L, "N": grid.N, "annulus_R": grid.annulus_R, "ode_tol": ode_tol},
        "remark_range": rng, "monodromy_problem": mono, **_end_report(end),
        "distance_to_model": {"max": float(dev.max()), "outer_ring_max": float(dev[0].max())},
        "mesh": {"n_r": m["n_r"], "n_theta": m["n_theta"], "epsilon": m["epsilon"],
                 "z_min": m["z_min"], "method": m.get("method", "series")},
    }
    return report, per, None


def cmd_convergence(cfg, out, threads):
    spec = make_spec(cfg)
    grid = make_grid(cfg)
    ode_tol = _tol(cfg, "ode_tol", 1e-11)
    _log_grid(grid, ode_tol)
    lad = cfg.get("ladders", {})
    t_ladder = lad.get("t") or list(np.logspace(-4, -3, 8))
    z_ladder = lad.get("z") or list(np.logspace(-3, -1, 8))
    for t in t_ladder:
        rng = _log_range(spec.with_t(t), grid, fatal=True)
    c = cfg.get("convergence", {})
    rep = convergence_experiment(spec, t_ladder, z_ladder, grid=grid, arg=c.get("arg", 0.7),
                                 ode_tol=ode_tol, K=cfg.get("series", {}).get("K", 24), threads=threads,
                                 floor=_tol(cfg, "floor", 1e-7), control=c.get("control", True),
                                 noise_factor=_tol(cfg, "noise_factor", 30.0))
    for cell in rep.info["cells"]:
        if "resonance_residual" in cell:
            log.info("t=%g: resonance diagnostic %.2e, M fit spread %.2e", cell["t"],
                     cell["resonance_residual"], cell["M_fit_spread"])
    log.info("fitted constants: immersion alpha=%s t_slope=%s C=%s; normal alpha=%s t_slope=%s C=%s",
             rep.fitted_alpha, rep.fitted_t_slope, rep.fitted_C, rep.alpha_normal,
             rep.t_slope_normal, rep.C_normal)
    report = {"command": "convergence", "potential": spec.to_json(), "remark_range_last": rng,
              **rep.to_json()}
    return report, None, (("t", "abs_z", "error", "mode"), rep.rows())


def cmd_embeddedness(cfg, out, threads):
    spec = make_spec(cfg)
    grid = make_grid(cfg)
    ode_tol = _tol(cfg, "ode_tol", ODE_TOL)
    _log_grid(grid, ode_tol)
    rng = _log_range(spec, grid, fatal=True)
    s = cfg.get("series", {})
    end = build_perturbed_end(spec, grid, K=s.get("K", 24), series_radius=s.get("radius", 0.25),
                              ode_tol=ode_tol)
    log.info("resonance diagnostic %.2e; p_t = %s", end.reg.diagnostics["resonance_residual"], end.reg.p_t)
    m = _mesh_params(cfg, "embeddedness")
    radii, th = annulus_mesh(m["epsilon"], m["z_min"], m["n_r"], m["n_theta"])
    per = perturbed_mesh(end, radii, th, m.get("method", "series"), ode_tol)
    mod = model_mesh(spec.residue, grid, radii, th)
    e = cfg.get("embedding", {})
    rep = embeddedness_check(per, mod, spec.residue.branch, spec.t, r_factor=e.get("r_factor"),
                             scan=e.get("scan", True), eps_inner=m.get("epsilon_prime"))
    log.info("embeddedness: %s, eps' = %s, r_n = %.4g, scan %s", "pass" if rep.passed else "FAIL",
             rep.epsilon_prime, rep.r_n, rep.scan)
    report = {"command": "embeddedness", "potential": spec.to_json(), "remark_range": rng,
              **_end_report(end), **rep.to_json(),
              "mesh": {"n_r": m["n_r"], "n_theta": m["n_theta"], "epsilon": m["epsilon"], "z_min": m["z_min"]}}
    return report, per, None


def cmd_monodromy(cfg, out, threads):
    spec = make_spec(cfg)
    grid = make_grid(cfg)
    ode_tol = _tol(cfg, "ode_tol", ODE_TOL)
    _log_grid(grid, ode_tol)
    rng = _log_range(spec, grid, fatal=False)
    mc = cfg.get("monodromy", {})
    default_abs = 1.0 if not math.isfinite(spec.epsilon) else 0.5 * spec.epsilon
    base = CoverPoint(math.log(mc.get("base_abs", default_abs)), mc.get("base_arg", 0.0))
    xi = spec.evaluator(grid)
    I = np.broadcast_to(np.eye(2, dtype=complex), (grid.L, 2, 2)).copy()
    M = monodromy(xi, base, I, ode_tol)
    report = {"command": "monodromy", "potential": spec.to_json(), "remark_range": rng,
              "grid": {"L": grid.L, "N": grid.N, "ode_tol": ode_tol},
              "base": {"log_abs": base.log_abs, "arg": base.arg}}
    report["monodromy_problem"] = _monodromy_report(M, "ODE")
    if spec.perturbation.is_zero and abs(base.log_abs) < 1e-15 and base.arg == 0.0:
        exact = delaunay_monodromy(spec.residue, grid)
        report["vs_closed_form"] = float(np.max(opnorm2(M.samples - exact.samples)))
        log.info("monodromy vs exp(2 pi i A): %.2e", report["vs_closed_form"])
    if mc.get("derivative", False):
        Md, M2, comm = monodromy_derivative(xi, base, I, ode_tol)
        report["derivative_t"] = {"norm": float(np.max(opnorm2(Md.samples))), "commutator": comm}
    return report, None, None


HANDLERS = {"delaunay": cmd_delaunay, "perturbed": cmd_perturbed, "convergence": cmd_convergence,
            "embeddedness": cmd_embeddedness, "monodromy": cmd_monodromy}


def _setup_logging(out: Path):
    root = logging.getLogger("dpwlab")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
    fmt = logging.Formatter("%(levelname)s %(name)s: %(message)s")
    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(fmt)
    fh = logging.FileHandler(out / "run.log", mode="w")
    fh.setFormatter(fmt)
    root.addHandler(sh)
    root.addHandler(fh)
    root.propagate = False
    return [sh, fh]


def run(command, config, out=".", threads=None) -> int:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"dpwlab: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 1
    handlers = _setup_logging(out)
    try:
        cfg = load_config(config, command)
        threads = resolve_threads(threads)
        log.info("command %s, config %s, threads %d, seed %s", command, config, threads, cfg.get("seed"))
        np.random.seed(cfg.get("seed", 0))
        report, mesh, table = HANDLERS[command](cfg, out, threads)
        o = _outputs(cfg, command)
        report["config"] = {k: v for k, v in cfg.items() if not k.startswith("_")}
        if o["json"]:
            export_json(out / f"{o['stem']}.json", report)
        if mesh is not None and o["obj"]:
            export_mesh(out / f"{o['stem']}.obj", mesh.f, mesh.N, closed=True)
        if table is not None and o["csv"]:
            export_csv(out / f"{o['stem']}.csv", *table)
        return 0
    except (ConfigError, DomainError, MeshTooCoarseError) as exc:
        log.error("invalid input: %s", exc)
        return 1
    except (DPWError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure in %s: %s", type(exc).__module__, exc)
        return 2
    finally:
        for h in handlers:
            h.close()
            logging.getLogger("dpwlab").removeHandler(h)


def build_parser():
    ap = argparse.ArgumentParser(prog="dpwlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (default: $DPWLAB_THREADS or 1)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
