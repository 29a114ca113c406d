"""Run configuration: JSON ingestion with strict validation.

Unknown keys are rejected and referenced files must exist at parse time,
so a typo fails fast instead of silently running a default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .ensembles import MatrixEnsemble
from .model import (
    DISTORTION_KINDS,
    L1,
    L2,
    LP,
    SQUARED_ERROR,
    ZERO_NORM,
    BlockSpec,
    PenaltySpec,
    SignalModel,
)

PENALTY_KINDS = (ZERO_NORM, L1, L2, LP)
ENSEMBLE_KINDS = ("marcenko_pastur", "identity", "empirical")
SOLVERS = ("ridge", "l1", "l0_exhaustive")

_TOP_KEYS = {
    "model",
    "penalties",
    "ensemble",
    "lambda",
    "tune",
    "distortions",
    "sweep",
    "rt",
    "simulate",
}


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


def _check_keys(d: dict, allowed: set, path: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigError(f"{path}: missing required key '{key}'")
    return d[key]


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class SweepSpec:
    c_grid: tuple
    mse0_db: float
    target_blocks: tuple


@dataclass(frozen=True)
class RtSpec:
    mse0_db: float


@dataclass(frozen=True)
class GateSpec:
    delta_sigmas: float | None = 3.0
    tv: float | None = 0.05
    mse_rel: float | None = None


@dataclass(frozen=True)
class SimulateSpec:
    n: int
    trials: int
    solver: str
    seed: int
    alpha: float | None
    gates: GateSpec


@dataclass(frozen=True)
class RunConfig:
    model: SignalModel
    penalties: tuple
    ensemble: MatrixEnsemble
    lam: float | None
    tune: bool
    distortions: tuple
    sweep: SweepSpec | None
    rt: RtSpec | None
    simulate: SimulateSpec | None
    ensemble_kind: str
    eigenvalues_file: str | None

    def to_dict(self) -> dict:
        """Canonical dict form; parsing it again yields an equal config."""
        out = {
            "model": {
                "lambda0": self.model.lam0,
                "blocks": [
                    {
                        "fraction": b.fraction,
                        "rho": b.rho,
                        "c": b.c,
                        "w": b.w,
                        "q": b.q,
                        "penalty": b.penalty_id,
                    }
                    for b in self.model.blocks
                ],
            },
            "penalties": [
                {"kind": p.kind, **({"p": p.p} if p.kind == LP else {})}
                for p in self.penalties
            ],
            "ensemble": {"kind": self.ensemble_kind, "alpha": self.ensemble.alpha},
            "tune": self.tune,
            "distortions": list(self.distortions),
        }
        if self.eigenvalues_file is not None:
            out["ensemble"]["eigenvalues_file"] = self.eigenvalues_file
        if self.lam is not None:
            out["lambda"] = self.lam
        if self.sweep is not None:
            out["sweep"] = {
                "c_grid": list(self.sweep.c_grid),
                "mse0_db": self.sweep.mse0_db,
                "target_blocks": list(self.sweep.target_blocks),
            }
        if self.rt is not None:
            out["rt"] = {"mse0_db": self.rt.mse0_db}
        if self.simulate is not None:
            s = self.simulate
            out["simulate"] = {
                "N": s.n,
                "trials": s.trials,
                "solver": s.solver,
                "seed": s.seed,
                "gates": {
                    "delta_sigmas": s.gates.delta_sigmas,
                    "tv": s.gates.tv,
                    "mse_rel": s.gates.mse_rel,
                },
            }
            if s.alpha is not None:
                out["simulate"]["alpha"] = s.alpha
        return out


def _parse_penalties(raw, path: str):
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: expected a nonempty list")
    out = []
    for i, item in enumerate(raw):
        p = f"{path}[{i}]"
        _check_keys(item, {"kind", "p"}, p)
        kind = _require(item, "kind", p)
        if kind not in PENALTY_KINDS:
            raise ConfigError(f"{p}.kind: must be one of {PENALTY_KINDS}, got {kind!r}")
        exponent = _number(item["p"], f"{p}.p") if "p" in item else None
        if kind != LP and exponent is not None:
            raise ConfigError(f"{p}.p: exponent only valid for '{LP}'")
        try:
            out.append(PenaltySpec(kind=kind, p=exponent))
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    return tuple(out)


def _parse_model(raw, n_penalties: int, path: str) -> SignalModel:
    _check_keys(raw, {"lambda0", "blocks"}, path)
    lam0 = _number(_require(raw, "lambda0", path), f"{path}.lambda0")
    blocks_raw = _require(raw, "blocks", path)
    if not isinstance(blocks_raw, list) or not blocks_raw:
        raise ConfigError(f"{path}.blocks: expected a nonempty list")
    blocks = []
    for i, item in enumerate(blocks_raw):
        p = f"{path}.blocks[{i}]"
        _check_keys(item, {"fraction", "rho", "c", "w", "q", "penalty"}, p)
        penalty_id = item.get("penalty", 0)
        if not isinstance(penalty_id, int) or not (0 <= penalty_id < n_penalties):
            raise ConfigError(f"{p}.penalty: index {penalty_id!r} outside penalty table")
        try:
            blocks.append(
                BlockSpec(
                    fraction=_number(_require(item, "fraction", p), f"{p}.fraction"),
                    rho=_number(_require(item, "rho", p), f"{p}.rho"),
                    c=_number(_require(item, "c", p), f"{p}.c"),
                    w=_number(item.get("w", 1.0), f"{p}.w"),
                    q=item.get("q", "gaussian"),
                    penalty_id=penalty_id,
                )
            )
        except ValueError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    try:
        return SignalModel(blocks=tuple(blocks), lam0=lam0)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_ensemble(raw, base_dir: Path, path: str):
    _check_keys(raw, {"kind", "alpha", "eigenvalues_file"}, path)
    kind = _require(raw, "kind", path)
    if kind not in ENSEMBLE_KINDS:
        raise ConfigError(f"{path}.kind: must be one of {ENSEMBLE_KINDS}, got {kind!r}")
    alpha = _number(_require(raw, "alpha", path), f"{path}.alpha")
    ev_file = raw.get("eigenvalues_file")
    if kind == "empirical":
        if ev_file is None:
            raise ConfigError(f"{path}: empirical ensemble needs 'eigenvalues_file'")
        full = base_dir / ev_file
        if not full.exists():
            raise ConfigError(f"{path}.eigenvalues_file: {full} does not exist")
        try:
            ens = MatrixEnsemble.from_eigenvalue_file(full, alpha)
        except ValueError as exc:
            raise ConfigError(f"{path}.eigenvalues_file: {exc}") from exc
    else:
        if ev_file is not None:
            raise ConfigError(f"{path}.eigenvalues_file: only valid for 'empirical'")
        try:
            ens = MatrixEnsemble(kind, alpha)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return ens, kind, ev_file


def _parse_sweep(raw, n_blocks: int, path: str) -> SweepSpec:
    _check_keys(raw, {"c_grid", "mse0_db", "target_blocks"}, path)
    grid = _require(raw, "c_grid", path)
    if not isinstance(grid, list) or len(grid) < 1:
        raise ConfigError(f"{path}.c_grid: expected a nonempty list")
    grid = tuple(_number(v, f"{path}.c_grid[{i}]") for i, v in enumerate(grid))
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{path}.c_grid: must be strictly increasing")
    targets = raw.get("target_blocks", [n_blocks - 1])
    if not isinstance(targets, list) or not all(
        isinstance(t, int) and 0 <= t < n_blocks for t in targets
    ):
        raise ConfigError(f"{path}.target_blocks: invalid block indices {targets!r}")
    return SweepSpec(
        c_grid=grid,
        mse0_db=_number(_require(raw, "mse0_db", path), f"{path}.mse0_db"),
        target_blocks=tuple(targets),
    )


def _parse_gates(raw, path: str) -> GateSpec:
    _check_keys(raw, {"delta_sigmas", "tv", "mse_rel"}, path)

    def opt(key):
        v = raw.get(key)
        return None if v is None else _number(v, f"{path}.{key}")

    return GateSpec(
        delta_sigmas=opt("delta_sigmas") if "delta_sigmas" in raw else 3.0,
        tv=opt("tv") if "tv" in raw else 0.05,
        mse_rel=opt("mse_rel"),
    )


def _parse_simulate(raw, path: str) -> SimulateSpec:
    _check_keys(raw, {"N", "trials", "solver", "seed", "alpha", "gates"}, path)
    n = _require(raw, "N", path)
    trials = _require(raw, "trials", path)
    if not isinstance(n, int) or n < 1:
        raise ConfigError(f"{path}.N: expected a positive integer, got {n!r}")
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError(f"{path}.trials: expected a positive integer, got {trials!r}")
    solver = _require(raw, "solver", path)
    if solver not in SOLVERS:
        raise ConfigError(f"{path}.solver: must be one of {SOLVERS}, got {solver!r}")
    seed = _require(raw, "seed", path)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{path}.seed: expected a nonnegative integer, got {seed!r}")
    alpha = _number(raw["alpha"], f"{path}.alpha") if "alpha" in raw else None
    gates = _parse_gates(raw.get("gates", {}), f"{path}.gates")
    return SimulateSpec(n=n, trials=trials, solver=solver, seed=seed, alpha=alpha, gates=gates)


def parse_config(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    base_dir = Path(base_dir)
    _check_keys(raw, _TOP_KEYS, "config")
    penalties = _parse_penalties(_require(raw, "penalties", "config"), "config.penalties")
    model = _parse_model(_require(raw, "model", "config"), len(penalties), "config.model")
    ens, ens_kind, ev_file = _parse_ensemble(
        _require(raw, "ensemble", "config"), base_dir, "config.ensemble"
    )
    lam = _number(raw["lambda"], "config.lambda") if "lambda" in raw else None
    if lam is not None and lam <= 0:
        raise ConfigError(f"config.lambda: must be positive, got {lam}")
    tune = raw.get("tune", False)
    if not isinstance(tune, bool):
        raise ConfigError(f"config.tune: expected a boolean, got {tune!r}")
    if lam is None and not tune:
        raise ConfigError("config: either 'lambda' or 'tune': true is required")
    distortions = raw.get("distortions", [SQUARED_ERROR])
    if not isinstance(distortions, list) or not distortions:
        raise ConfigError("config.distortions: expected a nonempty list")
    for d in distortions:
        if d not in DISTORTION_KINDS:
            raise ConfigError(
                f"config.distortions: must be among {DISTORTION_KINDS}, got {d!r}"
            )
    sweep = (
        _parse_sweep(raw["sweep"], len(model.blocks), "config.sweep") if "sweep" in raw else None
    )
    rt = None
    if "rt" in raw:
        _check_keys(raw["rt"], {"mse0_db"}, "config.rt")
        rt = RtSpec(mse0_db=_number(_require(raw["rt"], "mse0_db", "config.rt"), "config.rt.mse0_db"))
    simulate = _parse_simulate(raw["simulate"], "config.simulate") if "simulate" in raw else None
    return RunConfig(
        model=model,
        penalties=penalties,
        ensemble=ens,
        lam=lam,
        tune=tune,
        distortions=tuple(distortions),
        sweep=sweep,
        rt=rt,
        simulate=simulate,
        ensemble_kind=ens_kind,
        eigenvalues_file=ev_file,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)
