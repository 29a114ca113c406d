"""Replica-symmetric fixed point and asymptotic distortion prediction.

The order parameters (chi, p) determine the effective scalar channel
(theta, theta0); the fixed point equates them with block-averaged moments
of that channel.  Solved by damped Picard iteration with oscillation
detection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import MatrixEnsemble, effective_params
from .model import SQUARED_ERROR, DistortionSpec, SignalModel
from .scalar import ScalarChannel, channel_moments

TOL = 1e-10
MAX_ITER = 10_000
RUNAWAY_CAP = 1e12
DAMPING = 0.5
MIN_DAMPING = 0.05
OSCILLATION_WINDOW = 10
DEDUP_RTOL = 1e-6


class ReplicaConvergenceError(RuntimeError):
    """Picard iteration hit the iteration cap."""

    def __init__(self, message, residual=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state


@dataclass(frozen=True)
class RsState:
    """Converged order parameters and the effective channel they induce."""

    chi: float
    p: float
    theta: float
    theta0: float
    lam: float
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True)
class BlockPrediction:
    block_id: int
    se: float
    dist: dict


@dataclass(frozen=True)
class ReplicaPrediction:
    """Aggregate and per-block asymptotic distortions at a fixed point."""

    d_w: dict
    mse: float
    per_block: tuple
    state: RsState
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MultiStartResult:
    states: tuple
    n_started: int
    n_converged: int
    multiple_solutions: bool


def _block_channels(model: SignalModel, penalty_table, theta, theta0):
    return [
        ScalarChannel(theta, theta0, penalty_table[b.penalty_id], b.c, b)
        for b in model.blocks
    ]


def solve_rs(
    model: SignalModel,
    ens: MatrixEnsemble,
    penalty_table,
    lam: float,
    init: tuple[float, float] | None = None,
    damping: float = DAMPING,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> RsState:
    """Solve the two-variable fixed point by damped Picard iteration.

    The update maps (chi, p) to the block-averaged channel moments of the
    effective scalar channel; damping halves (down to 0.05) when the chi
    update sign-alternates for 10 consecutive steps.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    chi, p = init if init is not None else (1e-3, model.second_moment())
    gamma = damping
    fractions = np.array([b.fraction for b in model.blocks])
    alternations = 0
    prev_dchi_sign = 0.0
    residual = math.inf
    for it in range(1, max_iter + 1):
        if not (math.isfinite(chi) and math.isfinite(p)) or max(chi, p) > RUNAWAY_CAP:
            raise ReplicaConvergenceError(
                f"iteration diverged at step {it}: chi={chi:.3e}, p={p:.3e}",
                residual=residual,
            )
        try:
            theta, theta0 = effective_params(ens, chi, p, lam, model.lam0)
        except OverflowError as exc:
            raise ReplicaConvergenceError(
                f"iteration diverged at step {it}: chi={chi:.3e}, p={p:.3e}",
                residual=residual,
            ) from exc
        # Accuracy is re-verified once at the converged state; skipping the
        # node-doubling check inside the loop cuts its cost by two thirds.
        moments = [
            channel_moments(ch, check=False)
            for ch in _block_channels(model, penalty_table, theta, theta0)
        ]
        p_new = float(fractions @ [m.se for m in moments])
        if p_new < -1e-12:
            raise RuntimeError(f"negative mean squared error {p_new} from quadrature")
        p_new = max(p_new, 0.0)
        if theta0 == 0.0:
            chi_new = 0.0
        else:
            chi_new = (theta / theta0) * float(fractions @ [m.cz for m in moments])
        chi_new = max(chi_new, 0.0)
        residual = max(abs(chi_new - chi), abs(p_new - p))
        if residual <= tol * (1.0 + max(chi, p)):
            chi, p = chi_new, p_new
            theta, theta0 = effective_params(ens, chi, p, lam, model.lam0)
            for ch in _block_channels(model, penalty_table, theta, theta0):
                channel_moments(ch)  # raises on quadrature disagreement
            return RsState(chi, p, theta, theta0, lam, True, it, residual)
        dchi_sign = math.copysign(1.0, chi_new - chi) if chi_new != chi else 0.0
        if dchi_sign != 0.0 and dchi_sign == -prev_dchi_sign:
            alternations += 1
            if alternations >= OSCILLATION_WINDOW:
                gamma = max(MIN_DAMPING, 0.5 * gamma)
                alternations = 0
        else:
            alternations = 0
        prev_dchi_sign = dchi_sign
        chi = (1.0 - gamma) * chi + gamma * chi_new
        p = (1.0 - gamma) * p + gamma * p_new
    theta, theta0 = effective_params(ens, chi, p, lam, model.lam0)
    state = RsState(chi, p, theta, theta0, lam, False, max_iter, residual)
    raise ReplicaConvergenceError(
        f"no convergence after {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
        state=state,
    )


# For thresholding penalties the canonical start (1e-3, E[x^2]) can sit in a
# runaway basin even when a good fixed point exists at small p; these small
# starts recover it.
FALLBACK_INITS = ((1e-3, 1e-3), (1e-4, 1e-4), (1e-2, 1e-2), (0.1, 0.1), (1.0, 1.0))


def solve_rs_robust(
    model: SignalModel,
    ens: MatrixEnsemble,
    penalty_table,
    lam: float,
    init: tuple[float, float] | None = None,
) -> RsState:
    """solve_rs with an initialization fallback ladder.

    Tries the requested (or canonical) start first, then a fixed sequence
    of small starts; raises the last convergence error when all fail.
    Retries only help against divergence from a bad basin: when the
    iteration instead ran out its budget on a bounded slow trajectory
    (a cap failure, which carries the final state), other starts crawl
    the same way, so the ladder stops immediately.
    """
    last_error = None
    for start in (init,) + FALLBACK_INITS:
        try:
            return solve_rs(model, ens, penalty_table, lam, init=start)
        except ReplicaConvergenceError as exc:
            last_error = exc
            if exc.state is not None:
                break
    raise last_error


def default_start_grid(model: SignalModel, n_chi: int = 5, n_p: int = 5):
    """Log-spaced (chi, p) starts, plus the canonical default start."""
    p_hi = max(2.0 * model.second_moment(), 2e-4)
    grid = [
        (float(chi), float(p))
        for chi in np.geomspace(1e-4, 10.0, n_chi)
        for p in np.geomspace(1e-4, p_hi, n_p)
    ]
    grid.append((1e-3, model.second_moment()))
    return grid


def multi_start(
    model: SignalModel,
    ens: MatrixEnsemble,
    penalty_table,
    lam: float,
    grid=None,
) -> MultiStartResult:
    """Run solve_rs from many starts; return deduplicated converged states.

    Non-converged starts are dropped.  Two states are considered equal when
    both coordinates agree within 1e-6 relative; results are sorted by p.
    """
    grid = list(grid) if grid is not None else default_start_grid(model)
    if not grid:
        raise ValueError("start grid must contain at least one point")
    states = []
    for start in grid:
        try:
            states.append(solve_rs(model, ens, penalty_table, lam, init=start))
        except ReplicaConvergenceError:
            continue
    unique: list[RsState] = []
    for s in sorted(states, key=lambda s: s.p):
        dup = any(
            abs(s.chi - u.chi) <= DEDUP_RTOL * (1.0 + abs(u.chi))
            and abs(s.p - u.p) <= DEDUP_RTOL * (1.0 + abs(u.p))
            for u in unique
        )
        if not dup:
            unique.append(s)
    return MultiStartResult(
        states=tuple(unique),
        n_started=len(grid),
        n_converged=len(states),
        multiple_solutions=len(unique) > 1,
    )


def predict(
    state: RsState,
    model: SignalModel,
    penalty_table,
    distortions=(SQUARED_ERROR,),
) -> ReplicaPrediction:
    """Per-block channel moments at the fixed point, aggregated into the
    weighted distortion (per distortion kind) and the mean squared error."""
    keys = tuple(d.kind if isinstance(d, DistortionSpec) else d for d in distortions)
    per_block = []
    for bid, ch in enumerate(_block_channels(model, penalty_table, state.theta, state.theta0)):
        m = channel_moments(ch, distortions=keys)
        per_block.append(BlockPrediction(block_id=bid, se=m.se, dist=dict(m.dist)))
    mse = sum(b.fraction * blk.se for b, blk in zip(model.blocks, per_block))
    d_w = {
        k: sum(b.fraction * b.w * blk.dist[k] for b, blk in zip(model.blocks, per_block))
        for k in keys
    }
    return ReplicaPrediction(
        d_w=d_w,
        mse=mse,
        per_block=tuple(per_block),
        state=state,
        diagnostics={
            "iterations": state.iterations,
            "residual": state.residual,
            "converged": state.converged,
        },
    )


def fixed_point_residuals(
    state: RsState, model: SignalModel, ens: MatrixEnsemble, penalty_table
) -> tuple[float, float]:
    """Re-evaluate both fixed-point equations at a state; returns the two
    absolute residuals (chi equation, p equation)."""
    theta, theta0 = effective_params(ens, state.chi, state.p, state.lam, model.lam0)
    fractions = np.array([b.fraction for b in model.blocks])
    moments = [channel_moments(ch) for ch in _block_channels(model, penalty_table, theta, theta0)]
    p_new = float(fractions @ [m.se for m in moments])
    if theta0 == 0.0:
        chi_new = 0.0
    else:
        chi_new = (theta / theta0) * float(fractions @ [m.cz for m in moments])
    return abs(chi_new - state.chi), abs(p_new - state.p)
