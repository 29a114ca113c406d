"""Command-line front end.

Subcommands: predict, tune, rt, sweep, validate.  Configuration comes
from a JSON file (--config); results go to stdout or --out.  Exit codes:
0 success, 1 config error, 2 fixed-point non-convergence, 3 validation
gate failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from datetime import datetime, timezone

from .config import ConfigError, RunConfig, load_config
from .ensembles import MatrixEnsemble
from .replica import ReplicaConvergenceError, RsState, predict, solve_rs_robust
from .simulate import run_validation, write_histogram_csv
from .sweep import (
    MpFactory,
    TuningError,
    mse0_from_db,
    sweep_c,
    threshold_rate,
    tune_lambda,
    write_sweep_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_CONVERGENCE = 2
EXIT_GATE = 3

log = logging.getLogger("asymmap")


def _setup_logging() -> None:
    level = os.environ.get("ASYMMAP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"ASYMMAP_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)


def _check_finite(obj, path="$"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise RuntimeError(f"non-finite value in output at {path}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")


def _state_dict(state: RsState) -> dict:
    return {
        "chi": state.chi,
        "p": state.p,
        "theta": state.theta,
        "theta0": state.theta0,
        "lambda": state.lam,
        "converged": state.converged,
        "iterations": state.iterations,
        "residual": state.residual,
    }


def _resolve_lambda(cfg: RunConfig) -> float:
    if cfg.lam is not None:
        return cfg.lam
    result = tune_lambda(cfg.model, cfg.ensemble, cfg.penalties)
    log.info("tuned lambda = %.6g (mse %.6g)", result.lam, result.mse)
    return result.lam


def cmd_predict(cfg: RunConfig, args) -> int:
    lam = _resolve_lambda(cfg)
    try:
        state = solve_rs_robust(cfg.model, cfg.ensemble, cfg.penalties, lam)
    except ReplicaConvergenceError as exc:
        _emit(
            _json({"error": "no_convergence", "residual": exc.residual,
                   "state": _state_dict(exc.state) if exc.state else None}),
            args.out,
        )
        return EXIT_NO_CONVERGENCE
    prediction = predict(state, cfg.model, cfg.penalties, distortions=cfg.distortions)
    payload = {
        "state": _state_dict(state),
        "mse": prediction.mse,
        "d_w": dict(prediction.d_w),
        "per_block": [
            {"block_id": b.block_id, "se": b.se, "dist": dict(b.dist)}
            for b in prediction.per_block
        ],
        "diagnostics": dict(prediction.diagnostics),
    }
    _check_finite(payload)
    _emit(_json(payload), args.out)
    return EXIT_OK


def cmd_tune(cfg: RunConfig, args) -> int:
    try:
        result = tune_lambda(cfg.model, cfg.ensemble, cfg.penalties)
    except TuningError as exc:
        _emit(_json({"error": "no_convergence", "detail": str(exc)}), args.out)
        return EXIT_NO_CONVERGENCE
    payload = {
        "lambda_star": result.lam,
        "mse": result.mse,
        "at_bracket_edge": result.at_edge,
        "state": _state_dict(result.state),
    }
    _check_finite(payload)
    _emit(_json(payload), args.out)
    return EXIT_OK


def cmd_rt(cfg: RunConfig, args) -> int:
    if cfg.rt is None:
        raise ConfigError("config: 'rt' section required for the rt command")
    mse0 = mse0_from_db(cfg.rt.mse0_db)
    try:
        rt = threshold_rate(cfg.model, MpFactory(), cfg.penalties, mse0)
    except TuningError as exc:
        _emit(_json({"error": "no_convergence", "detail": str(exc)}), args.out)
        return EXIT_NO_CONVERGENCE
    payload = {
        "mse0_db": cfg.rt.mse0_db,
        "mse0": mse0,
        "R_t": rt.value,
        "status": rt.status,
        "lambda_star": rt.tune.lam if rt.tune else None,
        "mse_at_Rt": rt.tune.mse if rt.tune else None,
        "state": _state_dict(rt.tune.state) if rt.tune else None,
    }
    _check_finite(payload)
    _emit(_json(payload), args.out)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.sweep is None:
        raise ConfigError("config: 'sweep' section required for the sweep command")
    spec = cfg.sweep
    result = sweep_c(
        cfg.model,
        MpFactory(),
        cfg.penalties,
        spec.c_grid,
        mse0_from_db(spec.mse0_db),
        target_blocks=spec.target_blocks,
        threads=args.threads,
    )
    if args.format == "json":
        payload = {
            "mse0": result.mse0,
            "argmax_index": result.argmax_index,
            "rows": [
                {
                    "c": row.c,
                    "R_t": row.rt.value,
                    "status": row.rt.status,
                    "lambda_star": row.rt.tune.lam if row.rt.tune else None,
                    "mse_at_Rt": row.rt.tune.mse if row.rt.tune else None,
                }
                for row in result.rows
            ],
        }
        _emit(_json(payload), args.out)
    else:
        out = args.out or "sweep.csv"
        write_sweep_csv(result, out)
        log.info("wrote %s", out)
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    if cfg.simulate is None:
        raise ConfigError("config: 'simulate' section required for the validate command")
    spec = cfg.simulate
    alpha = spec.alpha if spec.alpha is not None else cfg.ensemble.alpha
    ens = cfg.ensemble if spec.alpha is None else MatrixEnsemble.marcenko_pastur(alpha)
    seed = args.seed if args.seed is not None else spec.seed
    lam = _resolve_lambda(cfg)
    report = run_validation(
        cfg.model,
        cfg.penalties,
        alpha=alpha,
        lam=lam,
        solver=spec.solver,
        n=spec.n,
        trials=spec.trials,
        seed=seed,
        ens=ens,
        distortions=cfg.distortions,
    )
    gates = spec.gates
    failures = []
    if gates.delta_sigmas is not None:
        for blk in report.per_block:
            for kind, delta in blk.delta_sigmas.items():
                if delta is not None and abs(delta) > gates.delta_sigmas:
                    failures.append(
                        f"block {blk.block_id} {kind}: |delta| = {abs(delta):.2f} sigma "
                        f"> {gates.delta_sigmas}"
                    )
    if gates.tv is not None and report.histograms.tv_given_zero > gates.tv:
        failures.append(
            f"tv_given_zero = {report.histograms.tv_given_zero:.4f} > {gates.tv}"
        )
    if gates.mse_rel is not None:
        rel = abs(report.mse - report.replica.mse) / max(report.replica.mse, 1e-300)
        if rel > gates.mse_rel:
            failures.append(f"relative mse gap {rel:.4f} > {gates.mse_rel}")
    payload = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "report": report.to_dict(),
        "gates": {"failures": failures, "passed": not failures},
    }
    _check_finite(payload["report"])
    _emit(_json(payload), args.out)
    if args.histogram_csv:
        write_histogram_csv(report, args.histogram_csv)
    return EXIT_GATE if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asymmap",
        description="Asymptotic distortion prediction for weighted-penalty "
        "regularized estimation, with Monte-Carlo validation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("predict", cmd_predict),
        ("tune", cmd_tune),
        ("rt", cmd_rt),
        ("sweep", cmd_sweep),
        ("validate", cmd_validate),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--seed", type=int, default=None, help="override the simulation seed")
        p.add_argument(
            "--threads", type=int, default=os.cpu_count() or 1,
            help="worker parallelism for sweeps",
        )
        p.add_argument("--format", choices=("json", "csv"), default=None)
        if name == "validate":
            p.add_argument("--histogram-csv", default=None, help="also write the x=0 histogram CSV")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.format is None:
        args.format = "csv" if args.command == "sweep" else "json"
    try:
        _setup_logging()
        cfg = load_config(args.config)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplicaConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
