"""Command-line entry point: `nlramsey <subcommand> [options]`.

Every subcommand prints one JSON document on stdout. Failures exit with a
nonzero status and a JSON object {"error": ..., "type": ...}.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import campaign as cmp
from .nonlinear import (
    CLOSED_FORM,
    NUMERIC_DYNAMIC,
    NUMERIC_SECULAR,
    NonlinearCoupling,
    SuperpositionSpec,
    phase_rate_closed_form,
    phase_rate_numeric,
)
from .oscillator import TrapConfig
from .scan import DEFAULT_RATES, DEFAULT_TAU_GRID, curves, interior_minimum, simulate_tau_scan
from .simulator import ShotSimulator, contrast_envelope

log = logging.getLogger("nlramsey")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _config(args) -> cmp.CampaignConfig:
    """Config file (or the reference defaults) with command-line overrides applied."""
    cfg = cmp.load_config(args.config) if args.config else cmp.CampaignConfig.reference_defaults()
    data = cfg.to_dict()
    if args.seed is not None:
        data["campaign"]["master_seed"] = args.seed
    if getattr(args, "blocks", None) is not None:
        data["campaign"]["blocks"] = args.blocks
    if getattr(args, "epsilon", None) is not None:
        data["coupling"]["epsilon_gamma"] = args.epsilon
    return cmp.config_from_dict(data)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _trap(args) -> TrapConfig:
    if getattr(args, "x0", None) is not None:
        return TrapConfig.isotropic(args.x0)
    return _config(args).trap


def cmd_phase_rate(args) -> dict:
    trap = _trap(args)
    coupling = NonlinearCoupling(args.epsilon if args.epsilon is not None else 1.0)
    spec = SuperpositionSpec.from_ground_population(args.p0)
    if args.method == CLOSED_FORM:
        r = phase_rate_closed_form(spec, trap, coupling)
    else:
        r = phase_rate_numeric(spec, trap, coupling, args.transverse, args.cross_terms,
                               dynamic=args.method == NUMERIC_DYNAMIC)
    return {"rate_rad_per_s": r.rate, "method": r.method, "cross_terms": r.cross_terms_included,
            "tolerance": r.tolerance, "x0_x": trap.x0_x, "ground_population": args.p0,
            "epsilon": coupling.epsilon_gamma, "details": r.details}


def cmd_oracle_check(args) -> dict:
    trap = TrapConfig.isotropic(args.x0)
    coupling = NonlinearCoupling(args.epsilon if args.epsilon is not None else 1e-12)
    rows = []
    for p0 in args.populations:
        spec = SuperpositionSpec.from_ground_population(p0)
        a = phase_rate_closed_form(spec, trap, coupling).rate
        b = phase_rate_numeric(spec, trap, coupling, "ground", False, dynamic=True).rate
        rows.append({"ground_population": p0, "closed_form": a, "numeric": b, "relative_difference": abs(b - a) / abs(a)})
    worst = max(r["relative_difference"] for r in rows)
    return {"rows": rows, "max_relative_difference": worst, "tolerance": args.rtol, "passed": worst <= args.rtol}


def cmd_simulate(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args)
    if args.envelope:
        pts = contrast_envelope(cfg.noise.heating_rate, args.taus or (0.005, 0.01, 0.015, 0.025),
                                args.trajectories, cfg.master_seed)
        path = cmp.emit_plot_data(pts, "contrast_envelope", out)
        return {"file": str(path), "points": [p.__dict__ for p in pts]}
    sim = ShotSimulator(cfg.trap, cfg.coupling, cfg.noise, cfg.truth_rate_method, cfg.truth_transverse)
    theta = 2 * math.asin(math.sqrt(args.population))
    tau = args.tau if args.tau is not None else cfg.tau_main
    xis = args.xi1 + np.array(cmp.XI_OFFSETS)
    records = []
    for k, xi in enumerate(xis):
        seeds = cmp.rngmod.derive_seeds(cfg.master_seed, args.shots, cmp.rngmod.STREAM_SHOTS, 9999, k)
        records += [sim.shot(theta, float(xi), tau, int(s), xi_index=k + 1) for s in seeds]
    cmp.write_shot_ndjson(records, out / "shots.ndjson")
    cmp.write_shot_csv(records, out / "shots.csv")
    means = [float(np.mean([r.outcome for r in records if r.xi_index == k + 1])) for k in range(3)]
    return {"files": [str(out / "shots.ndjson"), str(out / "shots.csv")], "tau_s": tau, "theta": theta,
            "xis": [float(x) for x in xis], "excited_fraction": means, "shots_per_point": args.shots}


def cmd_scan_tau(args) -> dict:
    cfg = _config(args)
    pts = simulate_tau_scan(cfg.trap, cfg.noise, args.taus or DEFAULT_TAU_GRID, args.rates or DEFAULT_RATES,
                            cfg.theta_targets, cfg.shots_per_point, args.repetitions, args.trajectories,
                            cfg.dead_time, cfg.master_seed)
    path = cmp.emit_plot_data(pts, "tau_scan", _out_dir(args))
    minima = {str(rate): interior_minimum(t, v) for rate, (t, v) in curves(pts).items()}
    return {"file": str(path), "interior_minimum_tau_s": minima, "dead_time_s": cfg.dead_time,
            "wall_time_definition": "6 * shots_per_point * (tau + dead_time)"}


def cmd_campaign(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args)
    ds = cmp.run_campaign(cfg, threads=args.threads)
    path = out / "dataset.ndjson"
    cmp.save_dataset(ds, path)
    cmp.save_config(cfg, out / "config.yaml")
    aborted = [r["block"] for r in ds.calibration_records if "aborted" in r]
    return {"dataset": str(path), "blocks": cfg.blocks, "shots": len(ds.shots), "aborted_blocks": aborted,
            "derived": cfg.derived()}


def cmd_analyze(args) -> dict:
    ds = cmp.load_dataset(args.dataset)
    report = cmp.analyze_dataset(ds)
    out = _out_dir(args)
    data = report.to_dict()
    (out / "report.json").write_text(json.dumps(data, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    files = [str(out / "report.json"), str(cmp.emit_plot_data(report, "block_series", out))]
    if report.fit is not None and not report.fit.degenerate:
        files.append(str(cmp.emit_plot_data(report, "epsilon_histogram", out)))
    summary = {k: v for k, v in data.items() if k != "blocks"}
    summary["files"] = files
    return summary


def cmd_emit_plot(args) -> dict:
    if args.figure not in cmp.FIGURE_IDS:
        raise ValueError(f"unknown figure id {args.figure!r}; valid ids: {', '.join(cmp.FIGURE_IDS)}")
    out = _out_dir(args)
    if args.figure in ("epsilon_histogram", "block_series"):
        if not args.dataset:
            raise ValueError(f"{args.figure} needs --dataset")
        path = cmp.emit_plot_data(cmp.load_dataset(args.dataset), args.figure, out)
    elif args.figure == "contrast_envelope":
        cfg = _config(args)
        pts = contrast_envelope(cfg.noise.heating_rate, (0.005, 0.01, 0.015, 0.025), 1000, cfg.master_seed)
        path = cmp.emit_plot_data(pts, args.figure, out)
    else:
        cfg = _config(args)
        pts = simulate_tau_scan(cfg.trap, cfg.noise, shots_per_point=cfg.shots_per_point, master_seed=cfg.master_seed)
        path = cmp.emit_plot_data(pts, args.figure, out)
    return {"file": str(path), "columns": list(cmp.PLOT_COLUMNS[args.figure])}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML campaign configuration")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes; never changes results")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nlramsey", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phase-rate", parents=[common], help="non-linear phase rate of one superposition")
    s.add_argument("--p0", type=float, default=0.5, help="ground-state population")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--x0", type=float, help="isotropic trap with this length scale (m)")
    s.add_argument("--method", choices=(CLOSED_FORM, NUMERIC_SECULAR, NUMERIC_DYNAMIC), default=CLOSED_FORM)
    s.add_argument("--transverse", choices=("ground", "thermal"), default="ground")
    s.add_argument("--cross-terms", action="store_true")
    s.set_defaults(func=cmd_phase_rate)

    s = sub.add_parser("oracle-check", parents=[common], help="closed form versus numerical oracle")
    s.add_argument("--x0", type=float, default=1e-8)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--populations", type=_floats, default=[0.1, 0.2, 0.5, 0.8, 0.9])
    s.add_argument("--rtol", type=float, default=0.01)
    s.set_defaults(func=cmd_oracle_check)

    s = sub.add_parser("simulate", parents=[common], help="single-setting shots or the contrast envelope")
    s.add_argument("--population", type=float, default=0.5)
    s.add_argument("--tau", type=float)
    s.add_argument("--xi1", type=float, default=0.0)
    s.add_argument("--shots", type=int, default=200)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--envelope", action="store_true", help="heating-only contrast envelope instead of shots")
    s.add_argument("--taus", type=_floats)
    s.add_argument("--trajectories", type=int, default=10000)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("scan-tau", parents=[common], help="normalized noise versus interrogation time")
    s.add_argument("--taus", type=_floats)
    s.add_argument("--rates", type=_floats)
    s.add_argument("--repetitions", type=int, default=2000)
    s.add_argument("--trajectories", type=int, default=2000)
    s.set_defaults(func=cmd_scan_tau)

    s = sub.add_parser("campaign", parents=[common], help="run a simulated measurement campaign")
    s.add_argument("--blocks", type=int)
    s.add_argument("--epsilon", type=float, help="injected non-linearity")
    s.set_defaults(func=cmd_campaign)

    s = sub.add_parser("analyze", parents=[common], help="estimate epsilon from a dataset")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("emit-plot", parents=[common], help="write plot data as CSV")
    s.add_argument("--figure", required=True)
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_emit_plot)
    return p


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            print(json.dumps({"error": "invalid command line", "type": "UsageError"}))
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ValueError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        result = args.func(args)
    except cmp.ConfigError as exc:
        print(json.dumps({"error": str(exc), "type": "ConfigError", "problems": exc.problems}))
        return 2
    except Exception as exc:  # every failure is reported as JSON
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}))
        return 1
    print(json.dumps(result, sort_keys=True, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
