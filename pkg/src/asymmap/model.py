"""Block-structured signal priors, penalty families and distortion measures.

A signal is divided into a fixed, small number of blocks.  Each block has
its own sparsity factor, penalty weight and distortion weight, which is
what makes the estimation problem asymmetric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FRACTION_TOL = 1e-12

ZERO_NORM = "zero_norm"
L1 = "l1"
L2 = "l2"
LP = "lp"
ZERO_NORM_PLUS = "zero_norm_plus"

SQUARED_ERROR = "squared_error"
SUPPORT_MISMATCH = "support_mismatch"
INDICATOR_MATCH = "indicator_match"
INDICATOR_MISMATCH = "indicator_mismatch"

DISTORTION_KINDS = (SQUARED_ERROR, SUPPORT_MISMATCH, INDICATOR_MATCH, INDICATOR_MISMATCH)

# Scale-aware zero tolerance for support comparison on continuous solver
# outputs: |xhat| <= ZERO_TOL_SCALE * rms(signal) counts as zero.
ZERO_TOL_SCALE = 1e-8


@dataclass(frozen=True)
class PenaltySpec:
    """Separable penalty family u(v; c).

    Supported kinds: zero_norm (c*1{v!=0}), l1 (c*|v|), l2 (c*v^2),
    lp (c*|v|^p with exponent p in (0, 2]), and zero_norm_plus
    (f(v) + c*1{v!=0} for a supplied smooth even function f).
    """

    kind: str
    p: float | None = None
    f: Callable[[float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in (ZERO_NORM, L1, L2, LP, ZERO_NORM_PLUS):
            raise ValueError(f"unknown penalty kind: {self.kind!r}")
        if self.kind == LP:
            if self.p is None or not (0.0 < self.p <= 2.0):
                raise ValueError("lp penalty needs exponent p in (0, 2]")
        if self.kind == ZERO_NORM_PLUS and self.f is None:
            raise ValueError("zero_norm_plus penalty needs a smooth component f")

    def value(self, v: float, c: float) -> float:
        """Evaluate u(v; c)."""
        if self.kind == ZERO_NORM:
            return c if v != 0.0 else 0.0
        if self.kind == L1:
            return c * abs(v)
        if self.kind == L2:
            return c * v * v
        if self.kind == LP:
            return c * abs(v) ** self.p
        if v == 0.0:
            return 0.0
        return self.f(v) + c


@dataclass(frozen=True)
class BlockSpec:
    """One block of the signal: sparsity, weights and its penalty."""

    fraction: float
    rho: float
    c: float
    w: float = 1.0
    q: str = "gaussian"
    penalty_id: int = 0

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"block fraction must be in (0, 1], got {self.fraction}")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"sparsity factor must be in [0, 1], got {self.rho}")
        if not (np.isfinite(self.c) and self.c >= 0):
            raise ValueError(f"penalty weight must be finite and >= 0, got {self.c}")
        if not (np.isfinite(self.w) and self.w >= 0):
            raise ValueError(f"distortion weight must be finite and >= 0, got {self.w}")
        if self.q != "gaussian":
            raise ValueError(f"unsupported nonzero distribution: {self.q!r}")


@dataclass(frozen=True)
class SignalModel:
    """Collection of blocks plus the measurement noise variance."""

    blocks: tuple[BlockSpec, ...]
    lam0: float

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise ValueError("model needs at least one block")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        total = sum(b.fraction for b in self.blocks)
        if abs(total - 1.0) > FRACTION_TOL:
            raise ValueError(f"block fractions must sum to 1, got {total}")
        if not (np.isfinite(self.lam0) and self.lam0 >= 0):
            raise ValueError(f"noise variance must be finite and >= 0, got {self.lam0}")

    def second_moment(self) -> float:
        """E[x^2] of the prior (unit-variance Gaussian nonzeros)."""
        return sum(b.fraction * b.rho for b in self.blocks)


@dataclass(frozen=True)
class DistortionSpec:
    """Pointwise distortion measure d(x, xhat)."""

    kind: str

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind: {self.kind!r}")


def finite_profile(model: SignalModel, n: int):
    """Lay out a length-n signal: per-index (rho, c, w, block_id) arrays.

    Block sizes are the largest-remainder rounding of fraction * n, with
    contiguous index ranges in block order.
    """
    blocks = model.blocks
    if n < len(blocks):
        raise ValueError(f"n={n} smaller than block count {len(blocks)}")
    targets = np.array([b.fraction * n for b in blocks])
    sizes = np.floor(targets).astype(int)
    remainder = n - sizes.sum()
    # Assign leftover slots to the largest fractional parts, index order on ties.
    order = np.argsort(-(targets - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    rho = np.repeat([b.rho for b in blocks], sizes)
    c = np.repeat([b.c for b in blocks], sizes)
    w = np.repeat([b.w for b in blocks], sizes)
    block_id = np.repeat(np.arange(len(blocks)), sizes)
    return rho, c, w, block_id


def prior_sample(block: BlockSpec, rng: np.random.Generator, size=None):
    """Draw from the sparse prior: 0 w.p. 1-rho, else a standard Gaussian."""
    mask = rng.random(size) < block.rho
    draw = rng.standard_normal(size)
    return np.where(mask, draw, 0.0) if size is not None else (draw if mask else 0.0)


def distortion(spec: DistortionSpec, x, xhat, zero_tol: float = 0.0):
    """Evaluate the distortion pointwise (vectorized over numpy inputs).

    For support comparison, x is tested against exact zero while xhat is
    tested against |xhat| <= zero_tol (continuous solvers rarely produce
    exact zeros).
    """
    x = np.asarray(x, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if spec.kind == SQUARED_ERROR:
        return (x - xhat) ** 2
    x_zero = x == 0.0
    xhat_zero = np.abs(xhat) <= zero_tol
    if spec.kind == SUPPORT_MISMATCH:
        return (x_zero ^ xhat_zero).astype(float)
    if spec.kind == INDICATOR_MATCH:
        return (x == xhat).astype(float)
    return (x != xhat).astype(float)
