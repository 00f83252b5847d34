"""Command-line front end: ``dobkit {normalize,design-q,check-stability,simulate,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 model error, 4 infeasible
design, 5 instability detected.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dob import default_sat_level, realize
from .lti import PlantError, nominal_model, to_normal_form
from .poly import DegenerateInputError
from .qfilter import DesignInfeasibleError, QFilterError, design_coefficients, verify_condition_C
from .sim import recovery_metrics, simulate_closed_loop, sweep, write_metrics_csv
from .stability import LoopFactors, Verdict, empirical_tau_threshold, root_grouping

log = logging.getLogger("dobkit")

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_DESIGN, EXIT_UNSTABLE = 0, 2, 3, 4, 5
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _tag(tau: float) -> str:
    return f"{tau:.6g}"


# -- commands ----------------------------------------------------------------

def cmd_normalize(cfg: cfgmod.ExperimentConfig, out: Path, args) -> int:
    cfg.require("plant")
    nf = to_normal_form(cfg.plant())
    report = nf.to_dict()
    report["transfer_function"] = {"num": nf.tf.num.coeffs, "den": nf.tf.den.coeffs}
    write_json(out / "normal_form.json", report)
    log.info("nu=%d m=%d minimum phase: %s", nf.nu, nf.m, report["is_minimum_phase"])
    return EXIT_OK


def _design(cfg: cfgmod.ExperimentConfig):
    d = cfg.design_args()
    nu, g_n = d["nu"], None
    if "nominal" in cfg.raw:
        nom = nominal_model(cfg.nominal_tf())
        nu = nu or nom.nu
        g_n = nom.g
    if nu is None:
        raise cfgmod.ConfigError("nu is required without a nominal model", "$.qfilter.design.nu")
    try:
        gains = cfg.gains(g_n)
        res = design_coefficients(nu, d["rho"], gains, d["safety"], d["k_cap"])
    except QFilterError as exc:
        # the request itself cannot be met (rho not Hurwitz, bad gain interval)
        raise CommandError(EXIT_DESIGN, f"design infeasible: {exc}") from exc
    cond = verify_condition_C(res.spec(1.0), gains, d["grid_points"])
    return res, gains, cond


def cmd_design(cfg: cfgmod.ExperimentConfig, out: Path, args) -> int:
    cfg.require("qfilter")
    if cfg.design_request is None:
        raise cfgmod.ConfigError("a design request is required", "$.qfilter.design")
    res, gains, cond = _design(cfg)
    report = res.to_dict()
    report["gain_interval"] = {"g_min": gains.g_min, "g_max": gains.g_max, "g_n": gains.g_n}
    report["condition_C"] = cond.to_dict()
    write_json(out / "qfilter.json", report)
    if not cond.ok:
        raise CommandError(EXIT_DESIGN, f"p_f not Hurwitz at {len(cond.violating_g)} grid gains")
    return EXIT_OK


def _qspec(cfg: cfgmod.ExperimentConfig, tau: float):
    if cfg.design_request is not None:
        res, _, cond = _design(cfg)
        if not cond.ok:
            raise CommandError(EXIT_DESIGN, "designed filter violates condition (C)")
        return res.spec(tau)
    return cfg.qfilter(tau)


def cmd_check_stability(cfg: cfgmod.ExperimentConfig, out: Path, args) -> int:
    cfg.require("plant", "nominal", "qfilter", "controller")
    taus = cfg.taus(args.tau)
    P = cfg.plant().transfer_function()
    f = LoopFactors(P, cfg.nominal_tf(), _qspec(cfg, taus[0]), cfg.controller())
    reports = root_grouping(f, taus)
    verdict = reports[0].verdict
    summary = {
        "verdict": verdict.value,
        "gamma": reports[0].gamma,
        "conditions": {k: {"ok": getattr(reports[0], k).ok, "margin": getattr(reports[0], k).margin}
                       for k in ("cond_A", "cond_B", "cond_C")},
        "tau_threshold": empirical_tau_threshold(reports),
    }
    write_json(out / "stability.json", [r.to_dict() for r in reports])
    write_json(out / "stability_summary.json", summary)
    log.info("verdict: %s", verdict.value)
    if verdict is not Verdict.ROBUST:
        raise CommandError(EXIT_UNSTABLE, f"verdict {verdict.value}: robust stability not established")
    return EXIT_OK


def _sim_setup(cfg: cfgmod.ExperimentConfig):
    cfg.require("plant", "nominal", "qfilter", "controller")
    plant = cfg.plant()
    nf = to_normal_form(plant)
    nom = nominal_model(cfg.nominal_tf())
    nom.check_against(nf.g)
    return nf, nom, cfg.controller()


def _sat_level(cfg, nf, nom, C, kw):
    """Configured level, ``"auto"`` as 3x the peak nominal input, or none."""
    level = cfg.raw.get("sat_level")
    if level is None:
        return None
    if level == "auto":
        nominal_run = simulate_closed_loop(nom.nf, nom, None, C, ref=cfg.reference(),
                                           ic=cfg.initial_conditions(), **kw)
        level = default_sat_level(nominal_run.ubar_nominal)
        log.info("saturation level %.6g", level)
    return float(level)


def cmd_simulate(cfg: cfgmod.ExperimentConfig, out: Path, args) -> int:
    nf, nom, C = _sim_setup(cfg)
    tau = cfg.taus(args.tau)[0]
    spec = _qspec(cfg, tau)
    kw = cfg.solver(args.solver)
    ctrl = realize(nom, spec, _sat_level(cfg, nf, nom, C, kw))
    tr = simulate_closed_loop(nf, nom, ctrl, C, ref=cfg.reference(), dist=cfg.disturbance(nf.q),
                              ic=cfg.initial_conditions(), **kw)
    tr.write_csv(out / f"trace_tau={_tag(tau)}.csv")
    metrics = recovery_metrics(tr, cfg.raw.get("T_settle"))
    write_json(out / "metrics.json", {"tau": tau, "diverged": tr.diverged, "solver": tr.meta,
                                      **metrics.to_dict()})
    write_json(out / "controller.json", ctrl.to_dict())
    if tr.diverged:
        raise CommandError(EXIT_UNSTABLE, f"trajectory diverged at t={tr.t[-1]:.4g}")
    return EXIT_OK


def cmd_sweep(cfg: cfgmod.ExperimentConfig, out: Path, args) -> int:
    nf, nom, C = _sim_setup(cfg)
    taus = cfg.taus(args.tau)
    spec = _qspec(cfg, taus[0])
    kw = cfg.solver(args.solver)
    T_factor = cfg.raw.get("T_settle_factor", 20.0)
    results = sweep(nf, nom, spec, C, taus, sat_level=_sat_level(cfg, nf, nom, C, kw),
                    workers=cfg.raw.get("workers"), T_settle_factor=T_factor, ref=cfg.reference(),
                    dist=cfg.disturbance(nf.q), ic=cfg.initial_conditions(), **kw)
    rows = []
    for r in results:
        r.trace.write_csv(out / f"trace_tau={_tag(r.tau)}.csv")
        rows.append({"tau": r.tau, "diverged": r.trace.diverged, **r.metrics.to_dict()})
    write_metrics_csv(results, out / "metrics.csv")
    write_json(out / "metrics.json", {"runs": rows})
    bad = [r.tau for r in results if r.trace.diverged]
    if bad:
        raise CommandError(EXIT_UNSTABLE, f"diverged for tau in {bad}")
    return EXIT_OK


COMMANDS = {
    "normalize": cmd_normalize,
    "design-q": cmd_design,
    "check-stability": cmd_check_stability,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dobkit", description="Disturbance-observer design and analysis.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment configuration (JSON)")
    p.add_argument("--out", help="output directory (default: config output_dir or .)")
    p.add_argument("--tau", type=float, nargs="+", help="override the tau list")
    p.add_argument("--solver", choices=["rk4", "rk45"])
    p.add_argument("--seed", type=int, help="seed for sampled plants")
    return p


def _setup_logging() -> None:
    level = os.environ.get("DOB_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level not in LOG_LEVELS:
        log.warning("unknown DOB_LOG_LEVEL %r, using warn", level)


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
        out = Path(args.out or cfg.raw.get("output_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except DesignInfeasibleError as exc:
        print(f"design infeasible: {exc}", file=sys.stderr)
        return EXIT_DESIGN
    except (PlantError, QFilterError, DegenerateInputError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
