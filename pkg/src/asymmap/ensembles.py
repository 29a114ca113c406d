"""Spectral laws of the Gram matrix and their Stieltjes/R-transforms.

The measurement matrix enters the asymptotic analysis only through the
limiting eigenvalue distribution of A^T A.  Three ensembles are supported:
the Marcenko-Pastur law (i.i.d. matrices with entry variance 1/K), the
identity Gram matrix, and an empirical spectrum given by a list of
eigenvalues.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class EnsembleDomainError(ValueError):
    """R-transform evaluated outside the domain of the spectral law."""


class EnsembleConvergenceError(RuntimeError):
    """Numeric inversion of the Stieltjes transform failed."""


class DegenerateEnsembleError(ValueError):
    """R-transform non-positive; effective channel undefined."""


_MP = "marcenko_pastur"
_IDENTITY = "identity"
_EMPIRICAL = "empirical"

# Bisection bracket for inverting the sample Stieltjes transform.
_BRACKET_LO = -1e6
_BRACKET_EPS = 1e-12
_BISECT_ITERS = 200

# Central-difference step for the empirical R-transform derivative.
_FD_STEP = 1e-6


@dataclass(frozen=True)
class MatrixEnsemble:
    """Spectral law of J = A^T A with load factor alpha = K/N."""

    kind: str
    alpha: float
    eigenvalues: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (_MP, _IDENTITY, _EMPIRICAL):
            raise ValueError(f"unknown ensemble kind: {self.kind!r}")
        if not (self.alpha > 0):
            raise ValueError(f"load factor must be positive, got {self.alpha}")
        if self.kind == _EMPIRICAL:
            if self.eigenvalues is None or len(self.eigenvalues) == 0:
                raise ValueError("empirical ensemble needs a nonempty eigenvalue list")
            ev = np.asarray(self.eigenvalues, dtype=float)
            if np.any(ev < 0) or not np.all(np.isfinite(ev)):
                raise ValueError("eigenvalues must be finite and nonnegative")
            object.__setattr__(self, "eigenvalues", ev)

    @staticmethod
    def marcenko_pastur(alpha: float) -> "MatrixEnsemble":
        return MatrixEnsemble(_MP, alpha)

    @staticmethod
    def identity(alpha: float = 1.0) -> "MatrixEnsemble":
        return MatrixEnsemble(_IDENTITY, alpha)

    @staticmethod
    def empirical(eigenvalues, alpha: float) -> "MatrixEnsemble":
        return MatrixEnsemble(_EMPIRICAL, alpha, np.asarray(eigenvalues, dtype=float))

    @staticmethod
    def from_eigenvalue_file(path: str | Path, alpha: float) -> "MatrixEnsemble":
        """Load an empirical ensemble from a text file, one eigenvalue per line."""
        ev = np.loadtxt(path, ndmin=1)
        return MatrixEnsemble.empirical(ev, alpha)


def _sample_stieltjes(ev: np.ndarray, s: float) -> float:
    # G(s) = mean(1/(lambda_i - s)); positive and increasing for s < min(ev).
    return float(np.mean(1.0 / (ev - s)))


def _invert_stieltjes(ev: np.ndarray, target: float) -> float:
    """Solve G(s) = target for s < min(ev) by bisection."""
    lo = _BRACKET_LO
    hi = float(ev.min()) - _BRACKET_EPS
    if not (_sample_stieltjes(ev, lo) <= target <= _sample_stieltjes(ev, hi)):
        raise EnsembleConvergenceError(
            f"Stieltjes inversion bracket ({lo}, {hi}) does not contain G=={target}"
        )
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if _sample_stieltjes(ev, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def r_transform(ens: MatrixEnsemble, omega: float) -> float:
    """R-transform R(omega) = G^{-1}(-omega) - 1/omega of the spectral law.

    At omega = 0 the removable singularity is resolved by the continuity
    limit R(0) = mean eigenvalue.
    """
    if ens.kind == _IDENTITY:
        return 1.0
    if ens.kind == _MP:
        if omega >= ens.alpha:
            raise EnsembleDomainError(
                f"Marcenko-Pastur R-transform undefined at omega={omega} >= alpha={ens.alpha}"
            )
        return ens.alpha / (ens.alpha - omega)
    ev = ens.eigenvalues
    if omega == 0.0:
        return float(ev.mean())
    s = _invert_stieltjes(ev, -omega)
    return s - 1.0 / omega


def r_transform_deriv(ens: MatrixEnsemble, omega: float) -> float:
    """Derivative dR/domega; closed form where available, else central difference."""
    if ens.kind == _IDENTITY:
        return 0.0
    if ens.kind == _MP:
        if omega >= ens.alpha:
            raise EnsembleDomainError(
                f"Marcenko-Pastur R-transform undefined at omega={omega} >= alpha={ens.alpha}"
            )
        return ens.alpha / (ens.alpha - omega) ** 2
    h = max(_FD_STEP, _FD_STEP * abs(omega))
    return (r_transform(ens, omega + h) - r_transform(ens, omega - h)) / (2.0 * h)


def effective_params(
    ens: MatrixEnsemble, chi: float, p: float, lam: float, lam0: float
) -> tuple[float, float]:
    """Effective channel parameters (theta, theta0) at order parameters (chi, p).

    theta = lam / R(omega) with omega = -chi/lam, and theta0 is the
    chain-rule expansion of d/dchi [(lam0*chi - lam*p) R(-chi/lam)]
    divided by R(omega)^2.  For Marcenko-Pastur this reduces to
    theta = lam + chi/alpha and theta0 = lam0 + p/alpha.
    """
    omega = -chi / lam
    r = r_transform(ens, omega)
    if r <= 0:
        raise DegenerateEnsembleError(f"R({omega}) = {r} <= 0")
    rp = r_transform_deriv(ens, omega)
    theta = lam / r
    theta0 = (lam0 * r - (lam0 * chi - lam * p) * rp / lam) / r**2
    return theta, theta0
