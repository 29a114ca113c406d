"""Finite-size Monte-Carlo validation.

Generates random linear-Gaussian instances, runs actual recovery (ridge,
weighted-l1 proximal gradient, or exhaustive weighted-l0 at tiny sizes),
and compares empirical per-block distortions and conditional output laws
against the asymptotic prediction and the decoupled scalar channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg

from .ensembles import MatrixEnsemble
from .model import (
    SQUARED_ERROR,
    SUPPORT_MISMATCH,
    ZERO_TOL_SCALE,
    DistortionSpec,
    SignalModel,
    distortion,
    finite_profile,
)
from .replica import ReplicaPrediction, predict, solve_rs_robust
from .scalar import scalar_map_vec

L1_MAX_ITER = 100_000
L1_OBJ_TOL = 1e-10
L1_STALL_STEPS = 10
POWER_ITERS = 100
L0_MAX_N = 22
MAX_FAILED_FRACTION = 0.05

HIST_RANGE = (-3.0, 3.0)
HIST_BINS = 20

DEFAULT_DISTORTIONS = (SQUARED_ERROR, SUPPORT_MISMATCH)


class SingularityError(RuntimeError):
    """Normal-equation factorization failed."""


@dataclass(frozen=True)
class Instance:
    """One random problem: y = A x + z with a block-structured signal."""

    A: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    c: np.ndarray
    w: np.ndarray
    block_id: np.ndarray
    seed: int
    alpha: float

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SolveInfo:
    converged: bool
    iterations: int
    objective: float


@dataclass
class BlockReport:
    block_id: int
    count: int
    dist_mean: dict
    dist_stderr: dict
    replica_dist: dict
    delta_sigmas: dict


def _json_edge(v):
    if v is None or math.isfinite(v):
        return v
    return "-inf" if v < 0 else "inf"


@dataclass
class HistogramTable:
    """Conditional histograms of xhat: one row per x-condition.

    Columns are an exact-zero atom, an underflow bin, 20 bins on [-3, 3]
    and an overflow bin, so each row's masses sum to 1.
    """

    bin_left: list
    bin_right: list
    conditions: list
    empirical: np.ndarray
    decoupled: np.ndarray
    tv_given_zero: float


@dataclass
class EmpiricalReport:
    trials: int
    n: int
    alpha: float
    lam: float
    solver: str
    seed: int
    failed_trials: int
    per_block: list
    mse: float
    mse_stderr: float
    histograms: HistogramTable
    replica: ReplicaPrediction
    zero_tol: float

    def to_dict(self) -> dict:
        h = self.histograms
        st = self.replica.state
        return {
            "trials": self.trials,
            "n": self.n,
            "alpha": self.alpha,
            "lambda": self.lam,
            "solver": self.solver,
            "seed": self.seed,
            "failed_trials": self.failed_trials,
            "zero_tol": self.zero_tol,
            "mse": self.mse,
            "mse_stderr": self.mse_stderr,
            "replica": {
                "mse": self.replica.mse,
                "d_w": dict(self.replica.d_w),
                "state": {
                    "chi": st.chi,
                    "p": st.p,
                    "theta": st.theta,
                    "theta0": st.theta0,
                    "lambda": st.lam,
                    "converged": st.converged,
                    "iterations": st.iterations,
                    "residual": st.residual,
                },
            },
            "per_block": [
                {
                    "block_id": b.block_id,
                    "count": b.count,
                    "empirical": dict(b.dist_mean),
                    "stderr": dict(b.dist_stderr),
                    "replica": dict(b.replica_dist),
                    "delta_sigmas": dict(b.delta_sigmas),
                }
                for b in self.per_block
            ],
            "histogram": {
                # Unbounded edges go out as strings: JSON has no Infinity.
                "bin_left": [_json_edge(v) for v in h.bin_left],
                "bin_right": [_json_edge(v) for v in h.bin_right],
                "conditions": list(h.conditions),
                "empirical": h.empirical.tolist(),
                "decoupled": h.decoupled.tolist(),
                "tv_given_zero": h.tv_given_zero,
            },
        }


def generate(model: SignalModel, n: int, alpha: float, seed) -> Instance:
    """Draw one instance: Gaussian A with entry variance 1/K, sparse signal
    from the block profile, Gaussian noise of variance lam0."""
    rho, c, w, block_id = finite_profile(model, n)
    k = int(round(alpha * n))
    if k < 1:
        raise ValueError(f"alpha*n = {alpha * n} gives no measurements")
    rng = np.random.default_rng(seed)
    a_mat = rng.standard_normal((k, n)) / math.sqrt(k)
    x = np.where(rng.random(n) < rho, rng.standard_normal(n), 0.0)
    z = math.sqrt(model.lam0) * rng.standard_normal(k) if model.lam0 > 0 else np.zeros(k)
    y = a_mat @ x + z
    return Instance(a_mat, x, z, y, rho, c, w, block_id, seed=seed, alpha=alpha)


def ridge_objective(inst: Instance, lam: float, c: np.ndarray, v: np.ndarray) -> float:
    r = inst.y - inst.A @ v
    return float(r @ r) / (2.0 * lam) + float(c @ v**2)


def l1_objective(inst: Instance, lam: float, c: np.ndarray, v: np.ndarray) -> float:
    r = inst.y - inst.A @ v
    return float(r @ r) / (2.0 * lam) + float(c @ np.abs(v))


def l0_objective(inst: Instance, lam: float, c: np.ndarray, v: np.ndarray) -> float:
    r = inst.y - inst.A @ v
    return float(r @ r) / (2.0 * lam) + float(c[v != 0.0].sum())


def solve_ridge(inst: Instance, lam: float, c_profile=None) -> np.ndarray:
    """Exact quadratic-penalty minimizer via the normal equations."""
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    c = inst.c if c_profile is None else np.asarray(c_profile, dtype=float)
    if np.any(c <= 0):
        raise ValueError("ridge requires strictly positive weights")
    lhs = inst.A.T @ inst.A / lam + 2.0 * np.diag(c)
    rhs = inst.A.T @ inst.y / lam
    try:
        xhat = scipy.linalg.solve(lhs, rhs, assume_a="pos")
    except scipy.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    resid = np.linalg.norm(lhs @ xhat - rhs)
    if resid > 1e-8 * max(np.linalg.norm(rhs), 1e-300):
        raise SingularityError(f"normal-equation residual {resid:.3e} too large")
    return xhat


def solve_weighted_l1(
    inst: Instance,
    lam: float,
    c_profile=None,
    max_iter: int = L1_MAX_ITER,
) -> tuple[np.ndarray, SolveInfo]:
    """Accelerated proximal gradient on the weighted-l1 objective.

    Fixed step 1/L with L estimated by power iteration; stops once the
    relative objective decrease stays below 1e-10 for 10 consecutive
    iterations.  The prox produces exact zeros.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    c = inst.c if c_profile is None else np.asarray(c_profile, dtype=float)
    a_mat, y = inst.A, inst.y
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(inst.N)
    for _ in range(POWER_ITERS):
        v = a_mat.T @ (a_mat @ v)
        v /= np.linalg.norm(v)
    smax2 = float(v @ (a_mat.T @ (a_mat @ v)))
    lip = smax2 / lam
    step = 1.0 / lip
    thresh = step * c
    x = np.zeros(inst.N)
    x_old = x.copy()
    t_mom = 1.0
    obj = l1_objective(inst, lam, c, x)
    stall = 0
    for it in range(1, max_iter + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        u = x + ((t_mom - 1.0) / t_next) * (x - x_old)
        grad = a_mat.T @ (a_mat @ u - y) / lam
        r = u - step * grad
        x_old = x
        x = np.sign(r) * np.maximum(np.abs(r) - thresh, 0.0)
        t_mom = t_next
        obj_new = l1_objective(inst, lam, c, x)
        if obj - obj_new < L1_OBJ_TOL * max(1.0, abs(obj)):
            stall += 1
            if stall >= L1_STALL_STEPS:
                return x, SolveInfo(True, it, obj_new)
            # Momentum restart keeps the stall test meaningful near the optimum.
            if obj_new > obj:
                t_mom = 1.0
        else:
            stall = 0
        obj = min(obj, obj_new)
    return x, SolveInfo(False, max_iter, obj)


def solve_weighted_l0_exhaustive(inst: Instance, lam: float, c_profile=None) -> np.ndarray:
    """Global weighted-l0 minimizer by support enumeration (n <= 22 only).

    Supports are visited by increasing size, lexicographically within a
    size, and a candidate replaces the incumbent only on strict objective
    improvement, so ties resolve toward smaller supports first.
    """
    if inst.N > L0_MAX_N:
        raise ValueError(f"exhaustive search refused for n = {inst.N} > {L0_MAX_N}")
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    c = inst.c if c_profile is None else np.asarray(c_profile, dtype=float)
    a_mat, y = inst.A, inst.y
    best = np.zeros(inst.N)
    best_obj = float(y @ y) / (2.0 * lam)
    for size in range(1, inst.N + 1):
        for support in combinations(range(inst.N), size):
            cols = a_mat[:, support]
            if np.linalg.matrix_rank(cols) < size:
                continue
            coef, _, _, _ = np.linalg.lstsq(cols, y, rcond=None)
            r = y - cols @ coef
            obj = float(r @ r) / (2.0 * lam) + float(c[list(support)].sum())
            if obj < best_obj - 1e-12 * (1.0 + abs(best_obj)):
                best = np.zeros(inst.N)
                best[list(support)] = coef
                best_obj = obj
    return best


def _solve(inst: Instance, lam: float, solver: str):
    if solver == "ridge":
        xhat = solve_ridge(inst, lam)
        return xhat, SolveInfo(True, 0, ridge_objective(inst, lam, inst.c, xhat))
    if solver == "l1":
        return solve_weighted_l1(inst, lam)
    if solver == "l0_exhaustive":
        xhat = solve_weighted_l0_exhaustive(inst, lam)
        return xhat, SolveInfo(True, 0, l0_objective(inst, lam, inst.c, xhat))
    raise ValueError(f"unknown solver: {solver!r}")


def _hist_edges():
    lo, hi = HIST_RANGE
    return np.linspace(lo, hi, HIST_BINS + 1)


def _bin_masses(values: np.ndarray, zero_tol: float) -> np.ndarray:
    """Masses over [atom, underflow, 20 bins, overflow]; sums to 1."""
    n = len(values)
    out = np.zeros(HIST_BINS + 3)
    if n == 0:
        return out
    zero = np.abs(values) <= zero_tol
    rest = values[~zero]
    edges = _hist_edges()
    counts, _ = np.histogram(rest, bins=edges)
    out[0] = zero.sum()
    out[1] = (rest < edges[0]).sum()
    out[2:-1] = counts
    out[-1] = (rest > edges[-1]).sum()
    # Values exactly on the outer edges land in the boundary bins via histogram.
    return out / n


def _conditional_tables(x: np.ndarray, xhat: np.ndarray, zero_tol: float):
    """Histogram rows of xhat conditioned on x = 0 and on 20 bins of x."""
    edges = _hist_edges()
    conditions = ["x_zero"] + [f"x_bin_{k}" for k in range(HIST_BINS)]
    rows = np.zeros((len(conditions), HIST_BINS + 3))
    x_zero = x == 0.0
    rows[0] = _bin_masses(xhat[x_zero], zero_tol)
    nz = ~x_zero
    which = np.digitize(x[nz], edges) - 1
    for k in range(HIST_BINS):
        rows[k + 1] = _bin_masses(xhat[nz][which == k], zero_tol)
    return conditions, rows


def decoupled_samples(
    model: SignalModel, penalty_table, theta: float, theta0: float, n: int, seed
):
    """Sample the decoupled scalar channel over the finite block profile:
    x from the prior, x + N(0, theta0) through the per-block estimator."""
    rho, c, w, block_id = finite_profile(model, n)
    rng = np.random.default_rng(seed)
    x = np.where(rng.random(n) < rho, rng.standard_normal(n), 0.0)
    y = x + math.sqrt(theta0) * rng.standard_normal(n) if theta0 > 0 else x.copy()
    xhat = np.empty(n)
    for bid, block in enumerate(model.blocks):
        idx = block_id == bid
        xhat[idx] = scalar_map_vec(penalty_table[block.penalty_id], theta, block.c, y[idx])
    return x, xhat


def run_validation(
    model: SignalModel,
    penalty_table,
    alpha: float,
    lam: float,
    solver: str,
    n: int,
    trials: int,
    seed: int,
    ens: MatrixEnsemble | None = None,
    distortions=DEFAULT_DISTORTIONS,
) -> EmpiricalReport:
    """Monte-Carlo recovery study with replica and decoupled-channel deltas.

    Per-trial generators are seeded by (seed, trial index), so the report
    is fully reproducible and independent of execution order.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if ens is None:
        ens = MatrixEnsemble.marcenko_pastur(alpha)
    keys = tuple(d.kind if isinstance(d, DistortionSpec) else d for d in distortions)
    state = solve_rs_robust(model, ens, penalty_table, lam)
    prediction = predict(state, model, penalty_table, distortions=keys)
    zero_tol = ZERO_TOL_SCALE * math.sqrt(max(model.second_moment(), 1e-300))

    n_blocks = len(model.blocks)
    per_trial = {k: np.zeros((trials, n_blocks)) for k in keys}
    trial_mse = np.zeros(trials)
    failed = 0
    xs, xhats, dec_xs, dec_xhats = [], [], [], []
    specs = {k: DistortionSpec(k) for k in keys}
    for t in range(trials):
        inst = generate(model, n, alpha, [seed, t])
        if solver == "l1":
            xhat, info = solve_weighted_l1(inst, lam)
            if not info.converged:
                failed += 1
        else:
            xhat, _ = _solve(inst, lam, solver)
        trial_mse[t] = float(np.mean((xhat - inst.x) ** 2))
        for k in keys:
            d = distortion(specs[k], inst.x, xhat, zero_tol=zero_tol)
            for bid in range(n_blocks):
                per_trial[k][t, bid] = float(d[inst.block_id == bid].mean())
        xs.append(inst.x)
        xhats.append(xhat)
        dx, dxh = decoupled_samples(
            model, penalty_table, state.theta, state.theta0, n, [seed, t, 1]
        )
        dec_xs.append(dx)
        dec_xhats.append(dxh)
    if failed > MAX_FAILED_FRACTION * trials:
        raise RuntimeError(f"{failed}/{trials} trials failed to converge")

    per_block = []
    _, _, _, block_id = finite_profile(model, n)
    for bid in range(n_blocks):
        means, errs, reps, deltas = {}, {}, {}, {}
        for k in keys:
            col = per_trial[k][:, bid]
            means[k] = float(col.mean())
            errs[k] = float(col.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
            reps[k] = prediction.per_block[bid].dist[k]
            deltas[k] = (means[k] - reps[k]) / errs[k] if errs[k] > 0 else None
        per_block.append(
            BlockReport(
                block_id=bid,
                count=int((block_id == bid).sum()),
                dist_mean=means,
                dist_stderr=errs,
                replica_dist=reps,
                delta_sigmas=deltas,
            )
        )

    x_all = np.concatenate(xs)
    xhat_all = np.concatenate(xhats)
    dec_x_all = np.concatenate(dec_xs)
    dec_xhat_all = np.concatenate(dec_xhats)
    conditions, emp_rows = _conditional_tables(x_all, xhat_all, zero_tol)
    _, dec_rows = _conditional_tables(dec_x_all, dec_xhat_all, zero_tol)
    tv = 0.5 * float(np.abs(emp_rows[0] - dec_rows[0]).sum())
    edges = _hist_edges()
    bin_left = [None, -math.inf] + list(edges[:-1]) + [edges[-1]]
    bin_right = [None, edges[0]] + list(edges[1:]) + [math.inf]
    hist = HistogramTable(
        bin_left=bin_left,
        bin_right=bin_right,
        conditions=conditions,
        empirical=emp_rows,
        decoupled=dec_rows,
        tv_given_zero=tv,
    )
    return EmpiricalReport(
        trials=trials,
        n=n,
        alpha=alpha,
        lam=lam,
        solver=solver,
        seed=seed,
        failed_trials=failed,
        per_block=per_block,
        mse=float(trial_mse.mean()),
        mse_stderr=float(trial_mse.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
        histograms=hist,
        replica=prediction,
        zero_tol=zero_tol,
    )


def write_histogram_csv(report: EmpiricalReport, path) -> None:
    """Conditional x = 0 histogram as CSV: bin_left, bin_right,
    empirical_mass, decoupled_mass (first row is the exact-zero atom)."""
    import csv

    h = report.histograms
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "empirical_mass", "decoupled_mass"])
        for left, right, e, d in zip(h.bin_left, h.bin_right, h.empirical[0], h.decoupled[0]):
            writer.writerow(
                ["atom" if left is None else f"{left:.6g}",
                 "atom" if left is None else f"{right:.6g}",
                 f"{e:.8g}", f"{d:.8g}"]
            )
