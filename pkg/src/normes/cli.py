"""Command-line harness.

    normes run       [--config FILE] [overrides]          trajectory.csv + summary.json
    normes verify    SUITE [--config FILE] [overrides]    verify_SUITE.json
    normes estimate  TARGET [--config FILE] [overrides]   estimate_TARGET.csv + .json
    normes report    [--output-dir DIR]                   figures/*.png from the CSVs in DIR
    normes config                                         print the default config

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .analysis import (
    cr_estimate,
    default_burn_in,
    drift_estimate,
    ergodic_average,
    log_norm_slope,
    parse_functional,
    parse_lyapunov,
    probe_at_norms,
)
from .chains import DivergenceError, normalize_raw, simulate, trajectory_columns, trajectory_row
from .config import DEFAULTS, ConfigError, load_config
from .es import NonFiniteObjectiveError
from .output import CsvWriter, write_csv, write_json
from .verify import SUITES, run_suite

log = logging.getLogger("normes")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 1, 2, 3
TARGETS = ("cr", "ergodic", "drift")


def cmd_run(cfg) -> int:
    out = Path(cfg.output_dir)
    recs_log_m, steps_seen = [], 0
    det_drift = 0.0
    divergence = None
    last = None
    with CsvWriter(out / "trajectory.csv", trajectory_columns(normalize_raw(cfg.raw0, cfg.x_star))) as w:
        try:
            for rec in simulate(cfg.params, cfg.objective, cfg.raw0, cfg.steps, cfg.seed, cfg.x_star):
                row = trajectory_row(rec, cfg.x_star)
                w.write(row)
                recs_log_m.append(math.log(float(np.linalg.norm(rec.raw.m - cfg.x_star))))
                if cfg.chain == "cma":
                    det_drift = max(det_drift, abs(math.expm1(np.linalg.slogdet(rec.state.sigma)[1])))
                steps_seen, last = rec.step, rec
        except (DivergenceError, NonFiniteObjectiveError) as exc:
            divergence = {"step": getattr(exc, "step", steps_seen + 1), "reason": str(exc)}
    slope = None
    if len(recs_log_m) >= 3:
        slope = float(stats.linregress(np.arange(len(recs_log_m)), recs_log_m).slope)
    summary = {
        "chain": cfg.chain,
        "objective": cfg.objective.name,
        "params": cfg.params.__dict__,
        "seed": cfg.seed,
        "steps_completed": steps_seen,
        "final_norm_m": float(np.linalg.norm(last.raw.m - cfg.x_star)) if last else None,
        "final_norm_z": float(np.linalg.norm(last.state.z)) if last else None,
        "log_norm_m_slope": slope,
        "det_drift_max": det_drift if cfg.chain == "cma" else None,
        "divergence": divergence,
    }
    write_json(out / "summary.json", summary)
    if divergence:
        log.error("%s", divergence["reason"])
        return EXIT_DIVERGENCE
    log.info("wrote %s (slope %.6g)", out / "trajectory.csv", slope if slope is not None else math.nan)
    return EXIT_OK


def cmd_verify(cfg, suite: str) -> int:
    out = Path(cfg.output_dir)
    try:
        checks, extra = run_suite(suite, cfg)
    except (DivergenceError, NonFiniteObjectiveError) as exc:
        write_json(out / f"verify_{suite}.json", {"suite": suite, "passed": False, "error": str(exc)})
        log.error("%s", exc)
        return EXIT_DIVERGENCE
    passed = all(c.passed for c in checks)
    verdict = {"suite": suite, "chain": cfg.chain, "d": cfg.d, "seed": cfg.seed, "passed": passed,
               "checks": [c.as_dict() for c in checks]}
    write_json(out / f"verify_{suite}.json", verdict)
    if "certificates" in extra:
        write_json(out / f"{suite}_certificates.json", extra["certificates"])
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {suite}.{c.name}  value={c.value}  tol={c.tolerance}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_estimate(cfg, target: str) -> int:
    out = Path(cfg.output_dir)
    est = cfg.estimate
    burn_in = default_burn_in(cfg.params) if cfg.burn_in is None else cfg.burn_in
    try:
        if target == "cr":
            cr = cr_estimate(cfg.chain, cfg.params, cfg.base_objective, burn_in, est["T"], cfg.replicas,
                             cfg.seed, workers=cfg.workers)
            slope = log_norm_slope(cfg.chain, cfg.params, cfg.base_objective, burn_in, est["T"], cfg.replicas,
                                   cfg.seed, workers=cfg.workers)
            write_csv(out / "estimate_cr.csv", ["replica", "cr", "log_norm_m_slope"],
                      [[i, a, b] for i, (a, b) in enumerate(zip(cr.values, slope.values))])
            joint = math.hypot(cr.std_error, slope.std_error)
            summary = {"target": "cr", "cr": cr.summary(), "log_norm_m_slope": slope.summary(),
                       "slope_plus_cr": slope.mean + cr.mean, "joint_ci95_halfwidth": 1.96 * joint}
        elif target == "ergodic":
            g = parse_functional(est["functional"])
            res = ergodic_average(cfg.chain, cfg.params, cfg.base_objective, g, burn_in, est["T"], cfg.seed)
            write_csv(out / "estimate_ergodic.csv", ["mean", "std_error", "n", "ci95_low", "ci95_high"],
                      [[res.mean, res.std_error, res.n, *res.ci95]])
            summary = {"target": "ergodic", "functional": est["functional"], **res.summary()}
        else:
            V = parse_lyapunov(est["lyapunov"])
            probes = probe_at_norms(cfg.chain, cfg.d, est["probe_norms"])
            rows = drift_estimate(cfg.chain, cfg.params, cfg.base_objective, V, probes, est["mc_per_state"],
                                  cfg.seed, workers=cfg.workers)
            write_csv(out / "estimate_drift.csv", ["probe", "norm_z", "v", "ratio", "std_error", "n"],
                      [[r.probe, r.norm_z, r.v, r.ratio, r.std_error, r.n] for r in rows])
            summary = {"target": "drift", "lyapunov": est["lyapunov"],
                       "rows": [r.__dict__ for r in rows]}
    except (DivergenceError, NonFiniteObjectiveError) as exc:
        write_json(out / f"estimate_{target}.json", {"target": target, "error": str(exc)})
        log.error("%s", exc)
        return EXIT_DIVERGENCE
    write_json(out / f"estimate_{target}.json", summary)
    print(json.dumps(summary, default=float)[:2000])
    return EXIT_OK


def cmd_report(output_dir) -> int:
    from .report import render_all

    written = render_all(output_dir)
    for path in written:
        print(path)
    if not written:
        log.error("no CSV outputs found in %s", output_dir)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _add_common(p):
    p.add_argument("--config", help="JSON config file (schema_version 1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--chain", choices=("cma", "csa"))
    p.add_argument("--objective", help="builtin objective name (parameters from the config file)")
    p.add_argument("--d", type=int, help="dimension")
    p.add_argument("--lam", type=int)
    p.add_argument("--mu", type=int)
    p.add_argument("--c", type=float)
    p.add_argument("--workers", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="normes", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="simulate the raw and normalized chains"))
    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=SUITES)
    _add_common(p)
    p = sub.add_parser("estimate", help="estimate CR, an ergodic average or drift ratios")
    p.add_argument("target", choices=TARGETS)
    _add_common(p)
    p = sub.add_parser("report", help="render figures from CSV outputs")
    p.add_argument("--output-dir", dest="output_dir", default=None)
    sub.add_parser("config", help="print the default configuration")
    return parser


_OVERRIDES = ("seed", "steps", "replicas", "output_dir", "chain", "objective", "d", "lam", "mu", "c", "workers")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "config":
        print(json.dumps(DEFAULTS, indent=2))
        return EXIT_OK
    if args.command == "report":
        import os

        out = args.output_dir or os.environ.get("NORMES_OUTPUT_DIR") or DEFAULTS["output_dir"]
        return cmd_report(out)
    overrides = {k: getattr(args, k) for k in _OVERRIDES}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite)
        return cmd_estimate(cfg, args.target)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
