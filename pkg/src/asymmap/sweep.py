"""Parameter tuning and curve generation.

Covers three levels: tuning the estimation parameter lambda at a fixed
load, finding the threshold compression rate (largest N/K meeting a
target mse with tuned lambda), and sweeping the penalty weight of chosen
blocks to reproduce the weighted-recovery study.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .ensembles import MatrixEnsemble
from .model import SignalModel
from .replica import ReplicaConvergenceError, RsState, solve_rs_robust

LOG_LAMBDA_BRACKET = (-6.0, 2.0)
TUNE_MAX_ITER = 80
TUNE_WIDTH_TOL = 1e-6
TUNE_SCAN_POINTS = 17
EDGE_MARGIN = 1e-3

INV_ALPHA_RANGE = (1.0, 64.0)
RT_TOL = 1e-3
PRESCAN_POINTS = 8

STATUS_OK = "ok"
STATUS_INFEASIBLE = "infeasible"
STATUS_ABOVE_RANGE = "above_range"

CSV_COLUMNS = ["c", "R_t", "lambda_star", "mse_at_Rt", "chi", "p", "converged", "argmax"]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class TuningError(RuntimeError):
    """Every lambda evaluation failed to converge."""


class NonMonotoneError(RuntimeError):
    """Tuned mse is not monotone in the inverse load; bisection unsafe."""


@dataclass(frozen=True)
class MpFactory:
    """Picklable ensemble factory: Marcenko-Pastur at a given load."""

    def __call__(self, alpha: float) -> MatrixEnsemble:
        return MatrixEnsemble.marcenko_pastur(alpha)


@dataclass(frozen=True)
class TuneResult:
    lam: float
    mse: float
    state: RsState
    at_edge: bool


@dataclass(frozen=True)
class ThresholdRate:
    value: float | None
    status: str
    tune: TuneResult | None = None

    def as_csv_value(self):
        return f"{self.value:.6g}" if self.status == STATUS_OK else self.status


@dataclass(frozen=True)
class SweepRow:
    c: float
    rt: ThresholdRate


@dataclass(frozen=True)
class SweepResult:
    axis: tuple
    rows: tuple
    mse0: float
    argmax_index: int | None

    def __post_init__(self):
        ax = np.array(self.axis)
        if len(ax) > 1 and not np.all(np.diff(ax) > 0):
            raise ValueError("sweep axis must be strictly increasing")


def mse0_from_db(db: float) -> float:
    """Target mse from its dB specification: -25 dB -> 10^(-2.5)."""
    return 10.0 ** (db / 10.0)


def tune_lambda(
    model: SignalModel,
    ens: MatrixEnsemble,
    penalty_table,
    log_bracket=LOG_LAMBDA_BRACKET,
    max_iter: int = TUNE_MAX_ITER,
    width_tol: float = TUNE_WIDTH_TOL,
) -> TuneResult:
    """Golden-section search minimizing the replica mse over log10(lambda).

    Each evaluation warm-starts the fixed-point solver from the previous
    lambda's solution; at the fixed point the mse equals the order
    parameter p, so no extra prediction pass is needed.
    """
    lo0, hi0 = log_bracket
    warm = {"init": None}
    evals = {}

    def f(xlog: float) -> float:
        if xlog in evals:
            return evals[xlog][0]
        try:
            st = solve_rs_robust(model, ens, penalty_table, 10.0**xlog, init=warm["init"])
        except ReplicaConvergenceError:
            evals[xlog] = (math.inf, None)
            return math.inf
        warm["init"] = (st.chi, st.p)
        evals[xlog] = (st.p, st)
        return st.p

    # Coarse scan first: the fixed point can diverge on whole lambda ranges,
    # and golden section cannot recover from a bracket of all-infinite values.
    # Scanned from large lambda downward (warm starts track the good branch);
    # two consecutive failures below a convergent point mark the divergent
    # region and end the scan.
    scan = [lo0 + k * (hi0 - lo0) / (TUNE_SCAN_POINTS - 1) for k in range(TUNE_SCAN_POINTS)]
    scan_vals = {}
    fails = 0
    for x in reversed(scan):
        scan_vals[x] = f(x)
        if math.isinf(scan_vals[x]):
            fails += 1
            if fails >= 2 and any(math.isfinite(v) for v in scan_vals.values()):
                break
        else:
            fails = 0
    if all(math.isinf(v) for v in scan_vals.values()):
        raise TuningError("no lambda evaluation converged over the search bracket")
    x_best_scan = min(scan_vals, key=scan_vals.get)
    k_best = scan.index(x_best_scan)
    a = scan[max(k_best - 1, 0)]
    b = scan[min(k_best + 1, len(scan) - 1)]
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < width_tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    finite = {x: v for x, v in evals.items() if v[1] is not None}
    if not finite:
        raise TuningError("no lambda evaluation converged over the search bracket")
    x_best = min(finite, key=lambda x: finite[x][0])
    mse_best, state_best = finite[x_best]
    at_edge = (x_best - lo0 < EDGE_MARGIN) or (hi0 - x_best < EDGE_MARGIN)
    return TuneResult(lam=10.0**x_best, mse=mse_best, state=state_best, at_edge=at_edge)


def threshold_rate(
    model: SignalModel,
    ens_factory,
    penalty_table,
    mse0: float,
    inv_alpha_range=INV_ALPHA_RANGE,
    tol: float = RT_TOL,
) -> ThresholdRate:
    """Largest inverse load N/K achieving tuned mse <= mse0, by bisection.

    A coarse pre-scan validates that the tuned mse is monotone in the
    inverse load before trusting the bisection.  Sentinels: "infeasible"
    when even the smallest inverse load misses the target, "above_range"
    when the target is still met at the upper end.
    """
    if not mse0 > 0:
        raise ValueError(f"mse0 must be positive, got {mse0}")
    lo_ia, hi_ia = inv_alpha_range
    cache = {}

    def tuned(ia: float) -> TuneResult:
        if ia not in cache:
            cache[ia] = tune_lambda(model, ens_factory(1.0 / ia), penalty_table)
        return cache[ia]

    scan = np.geomspace(lo_ia, hi_ia, PRESCAN_POINTS)
    scan_mse = [tuned(float(ia)).mse for ia in scan]
    for k in range(len(scan) - 1):
        if scan_mse[k + 1] < scan_mse[k] - 1e-9 * (1.0 + scan_mse[k]):
            raise NonMonotoneError(
                f"tuned mse decreases from {scan_mse[k]:.6g} to {scan_mse[k + 1]:.6g} "
                f"between inverse loads {scan[k]:.4g} and {scan[k + 1]:.4g}"
            )
    if scan_mse[0] > mse0:
        return ThresholdRate(None, STATUS_INFEASIBLE, tuned(float(scan[0])))
    if scan_mse[-1] <= mse0:
        return ThresholdRate(None, STATUS_ABOVE_RANGE, tuned(float(scan[-1])))
    # Bracket from the pre-scan, then bisect on the feasibility boundary.
    k = max(i for i in range(len(scan)) if scan_mse[i] <= mse0)
    lo, hi = float(scan[k]), float(scan[k + 1])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if tuned(mid).mse <= mse0:
            lo = mid
        else:
            hi = mid
    return ThresholdRate(lo, STATUS_OK, tuned(lo))


def _apply_c(model: SignalModel, c: float, target_blocks) -> SignalModel:
    blocks = tuple(
        replace(b, c=c) if i in target_blocks else b for i, b in enumerate(model.blocks)
    )
    return replace(model, blocks=blocks)


def _sweep_point(args):
    model, ens_factory, penalty_table, c, target_blocks, mse0 = args
    rt = threshold_rate(_apply_c(model, c, target_blocks), ens_factory, penalty_table, mse0)
    return SweepRow(c=c, rt=rt)


def sweep_c(
    model: SignalModel,
    ens_factory,
    penalty_table,
    c_grid,
    mse0: float,
    target_blocks=(1,),
    threads: int = 1,
) -> SweepResult:
    """Threshold compression rate over a grid of penalty weights.

    target_blocks names the block indices whose weight is set to each grid
    value; the remaining blocks keep their configured weight.  Grid points
    are independent and may be evaluated in parallel; aggregation order is
    deterministic.
    """
    c_grid = [float(c) for c in c_grid]
    jobs = [(model, ens_factory, penalty_table, c, tuple(target_blocks), mse0) for c in c_grid]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    ok = [i for i, r in enumerate(rows) if r.rt.status == STATUS_OK]
    argmax = max(ok, key=lambda i: rows[i].rt.value) if ok else None
    return SweepResult(axis=tuple(c_grid), rows=tuple(rows), mse0=mse0, argmax_index=argmax)


def write_sweep_csv(result: SweepResult, path) -> None:
    """One row per grid point, header row mandatory."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i, row in enumerate(result.rows):
            t = row.rt.tune
            st = t.state if t is not None else None
            writer.writerow(
                [
                    f"{row.c:.6g}",
                    row.rt.as_csv_value(),
                    f"{t.lam:.6g}" if t else "",
                    f"{t.mse:.6g}" if t else "",
                    f"{st.chi:.6g}" if st else "",
                    f"{st.p:.6g}" if st else "",
                    str(bool(st.converged)).lower() if st else "",
                    str(i == result.argmax_index).lower(),
                ]
            )
