"""
Command-line front end.

    oseen-stab <spectrum|design|simulate|verify|sweep> [--config FILE] [--out DIR]

Exit codes: 0 all certificates pass, 2 configuration error, 3 spectrum or
hypothesis failure, 4 gain infeasibility, 5 verification failure.  Every
artifact embeds the resolved configuration.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .channel import ChannelFlow
from .config import RunConfig, load_config
from .controller import (
    build_feedback,
    gram_matrix,
    obliqueness_report,
    real_feedback,
    restrict_support,
    select_gains,
)
from .errors import OseenStabError
from .galerkin import GalerkinModel, leading_stable, richardson_ratio, stability_radius
from .lift import lift_control_directions, verify_duality
from .simulate import (
    modal_initial_condition,
    retained_stable,
    simulate_linear,
    simulate_open_loop,
)
from .spectral import build_grid
from .spectrum import check_resolution, compute_spectrum, unique_continuation_check

__all__ = ["run_command", "main", "COMMANDS", "EXIT_CODES"]

EXIT_CODES = {"pass": 0, "config": 2, "spectrum": 3, "gains": 4, "verification": 5}

# tolerances of the emitted certificates
BIORTH_TOL = 1e-8
DUALITY_TOL = 1e-6
COND_MAX = 1e8
YFORM_TOL = 1e-8
RESOLUTION_TOL = 1e-8


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [_clean(float(v.real)), _clean(float(v.imag))]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else None
    return v


def _write_json(path, payload, cfg):
    doc = {"config": cfg.to_dict(), **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path, header, rows, cfg):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


class _Run:
    """Lazily built pipeline objects shared by the commands."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.flow = ChannelFlow.from_truncation(cfg.nu, cfg.a, cfg.M_x)
        self.grid = build_grid(cfg.M)
        self.sp = compute_spectrum(self.flow, self.grid, n_keep=cfg.J, margin=cfg.margin,
                                   cluster_tol=cfg.cluster_tol)
        self._law = None

    def law(self):
        if self._law is None:
            sp, cfg = self.sp, self.cfg
            gains = select_gains(sp.lambdas[: sp.N], self.flow.nu)
            if cfg.variant == "real":
                law = real_feedback(sp, gains, cfg.alpha0)
            else:
                law = build_feedback(sp, gains, cfg.alpha0)
                if cfg.variant == "restricted":
                    law = restrict_support(law, cfg.wall)
            self._law = (law, lift_control_directions(law, self.flow, self.grid))
        return self._law


def _spectrum_reports(run):
    sp = run.sp
    uc = unique_continuation_check(sp)
    rep = {
        "N": sp.N,
        "unstable": [md.lam for md in sp.unstable],
        "semisimple": {"passed": sp.semisimple.passed,
                       "clusters": [{"indices": list(c[0]), "algebraic": c[1], "geometric": c[2]}
                                    for c in sp.semisimple.clusters]},
        "unique_continuation": uc,
        "truncation_max_re": sp.truncation,
    }
    ok = sp.semisimple.passed and uc["passed"]
    if sp.N:
        _, cond = gram_matrix(sp)
        rep["trace_gram_cond"] = cond
        ok = ok and cond < COND_MAX
    rep["passed"] = bool(ok)
    return rep


def _cmd_spectrum(run, out):
    sp = run.sp
    rows = [(md.m, j, md.lam.real, md.lam.imag, md.residual, md.residual_star,
             float(abs(md.wall_data[0]) + abs(md.wall_data[1])), int(j < sp.N))
            for j, md in enumerate(sp.modes)]
    header = ["m", "index", "re_lambda", "im_lambda", "residual", "residual_adjoint", "wall_curvature",
              "unstable"]
    p1 = _write_csv(os.path.join(out, "spectrum.csv"), header, rows, run.cfg)
    rep = _spectrum_reports(run)
    p2 = _write_json(os.path.join(out, "spectrum.json"), rep, run.cfg)
    return rep["passed"], [p1, p2]


def _cmd_design(run, out):
    if run.sp.N == 0:
        payload = {"N": 0, "note": "no unstable modes; no feedback needed", "passed": True}
        return True, [_write_json(os.path.join(out, "design.json"), payload, run.cfg)]
    law, _ = run.law()
    d = law.to_dict()
    d["passed"] = bool(d["certificate"]["passed"])
    return d["passed"], [_write_json(os.path.join(out, "design.json"), d, run.cfg)]


def _traj_rows(tr):
    z = np.concatenate([tr.z_unstable, tr.z_stable], axis=1)
    for i, t in enumerate(tr.times):
        yield [t] + [x for c in z[i] for x in (c.real, c.imag)] + [tr.state_norm[i], tr.control_norm[i]]


def _traj_header(tr):
    n = tr.z_unstable.shape[1] + tr.z_stable.shape[1]
    return ["t"] + [f"{p}_z{j}" for j in range(n) for p in ("re", "im")] + ["state_norm", "control_norm"]


def _cmd_simulate(run, out):
    sp, cfg = run.sp, run.cfg
    y0 = modal_initial_condition(sp, cfg.seed, stable_cutoff=cfg.stable_cutoff)
    stable = retained_stable(sp, cfg.stable_cutoff)
    op = simulate_open_loop(sp, y0, cfg.T, cfg.dt, stable=stable)
    paths = [_write_csv(os.path.join(out, "trajectory_open.csv"), _traj_header(op), _traj_rows(op), cfg)]
    gap = float(min(sp.lambdas[stable].real)) if stable else np.inf
    summary = {"N": sp.N, "stable_retained": len(stable), "stable_gap": gap,
               "open": {"ratio": op.ratio(), "gamma_fit": op.gamma_fit}}
    if sp.N == 0:
        ok = op.ratio() < 1.0
    else:
        law, lifted = run.law()
        cl = simulate_linear(sp, law, lifted, y0, cfg.T, cfg.dt, stable=stable)
        paths.append(_write_csv(os.path.join(out, "trajectory_closed.csv"), _traj_header(cl),
                                _traj_rows(cl), cfg))
        target = 0.9 * min(law.gains.gamma0, gap)
        checks = {
            "yform_mismatch": cl.checks["yform_mismatch"],
            "yform_ok": cl.checks["yform_mismatch"] <= YFORM_TOL,
            "decay_ok": cl.gamma_fit is not None and cl.gamma_fit >= target,
        }
        if "modal_bound" in cl.checks:
            checks["modal_bound"] = cl.checks["modal_bound"]
        summary["closed"] = {"variant": law.variant, "ratio": cl.ratio(), "gamma_fit": cl.gamma_fit,
                             "gamma0": law.gains.gamma0, "target": target, "checks": checks}
        ok = checks["yform_ok"] and checks["decay_ok"] and checks.get("modal_bound", True)
    summary["passed"] = bool(ok)
    paths.append(_write_json(os.path.join(out, "summary.json"), summary, cfg))
    return bool(ok), paths


def _cmd_verify(run, out):
    sp, cfg = run.sp, run.cfg
    res = check_resolution(run.flow, cfg.M)
    rep = {"spectrum": _spectrum_reports(run),
           "resolution": {"worst": res, "passed": max(res.values()) <= RESOLUTION_TOL}}
    ok = rep["spectrum"]["passed"] and rep["resolution"]["passed"]
    if sp.N:
        law, lifted = run.law()
        biorth = float(np.abs(sp.gram - np.eye(sp.N)).max())
        dual = verify_duality(sp, law, lifted)
        delta = float(np.abs(law.delta_pairing() - np.eye(law.N)).max())
        y0 = modal_initial_condition(sp, cfg.seed, stable_cutoff=cfg.stable_cutoff)
        obl = obliqueness_report(law, y0, alphas=(1.0, 10.0, 100.0))
        cert = law.gains.certificate()
        mism = max(r["normal_mismatch"] for r in obl["ladder"])
        obl_ok = obl["monotone"] and mism <= 1e-10
        if law.alpha.kind == "wall-sign":
            obl_ok = obl_ok and obl["min_cos"][-1] > 0.99
        # a cosine weight vanishes at two points, where the control is tangential
        rep.update({
            "biorthogonality": {"max_defect": biorth, "passed": biorth <= BIORTH_TOL},
            "duality": {"residual": dual.residual, "max_residual": dual.max_residual,
                        "alpha_pairing": dual.alpha_pairing,
                        "passed": dual.max_residual <= DUALITY_TOL},
            "delta_pairing": {"max_defect": delta, "passed": delta <= 1e-10},
            "gains": cert,
            "obliqueness": {"min_cos": obl["min_cos"], "monotone": obl["monotone"],
                            "normal_mismatch": [r["normal_mismatch"] for r in obl["ladder"]],
                            "alpha_kind": law.alpha.kind, "passed": obl_ok},
        })
        ok = ok and all(rep[k]["passed"] for k in ("biorthogonality", "duality", "delta_pairing",
                                                    "gains", "obliqueness"))
    rep["passed"] = bool(ok)
    return bool(ok), [_write_json(os.path.join(out, "verify.json"), rep, cfg)]


def _cmd_sweep(run, out):
    sp, cfg = run.sp, run.cfg
    if sp.N == 0:
        payload = {"N": 0, "note": "no unstable modes; nothing to bisect", "passed": True}
        return True, [_write_json(os.path.join(out, "sweep.json"), payload, cfg)]
    law, lifted = run.law()
    model = GalerkinModel(sp, law, lifted, leading_stable(sp, cfg.n_modes - law.N))
    shape = modal_initial_condition(sp, cfg.seed, n_modes=model.n_modes)
    rad = stability_radius(model, shape, cfg.T, cfg.dt)
    payload = {"model": "nonlinear Galerkin surrogate", "n_modes": model.n_modes, "radius": rad}
    ok = rad["rho"] > 0 and rad["fails_at_10rho"]
    if rad["rho"] > 0:
        ratio, devs = richardson_ratio(model, shape, 1e-2 * rad["rho"], cfg.T, cfg.dt)
        payload["richardson"] = {"ratio": ratio, "deviations": devs, "passed": 3.5 <= ratio <= 4.5}
        ok = ok and payload["richardson"]["passed"]
    payload["passed"] = bool(ok)
    return bool(ok), [_write_json(os.path.join(out, "sweep.json"), payload, cfg)]


COMMANDS = {
    "spectrum": _cmd_spectrum,
    "design": _cmd_design,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "sweep": _cmd_sweep,
}


def run_command(cmd, cfg, out_dir=None):
    """Run ``cmd`` with ``cfg``; returns (exit status, list of artifact paths).

    Library errors propagate; ``main`` maps them to exit codes.
    """
    if cmd not in COMMANDS:
        raise ValueError(f"unknown command {cmd!r}")
    out = out_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    ok, paths = COMMANDS[cmd](_Run(cfg), out)
    return (0 if ok else EXIT_CODES["verification"]), paths


def main(argv=None):
    ap = argparse.ArgumentParser(prog="oseen-stab", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key = value config file (defaults if omitted)")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        status, paths = run_command(args.command, cfg, args.out)
    except OseenStabError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES["config"]
    for p in paths:
        print(p)
    print("pass" if status == 0 else "FAIL")
    return status


if __name__ == "__main__":
    sys.exit(main())
