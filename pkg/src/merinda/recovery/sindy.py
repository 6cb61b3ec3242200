"""Ridge regression with sequential thresholding over the term library."""

from __future__ import annotations

import warnings

import numpy as np

from ..dynamics import Trajectory
from .library import CoeffVector, TermLibrary, eval_library_batch

__all__ = ["SingularSystemError", "sindy_fit"]

_COND_LIMIT = 1e12


class SingularSystemError(RuntimeError):
    def __init__(self, cond: float):
        super().__init__(f"normal equations are singular (condition estimate {cond:.3e})")
        self.cond = cond


def _ridge_solve(phi: np.ndarray, rhs: np.ndarray, lam: float) -> np.ndarray:
    gram = phi.T @ phi + lam * np.eye(phi.shape[1])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularSystemError(float(cond))
    return np.linalg.solve(gram, phi.T @ rhs)


def sindy_fit(traj: Trajectory, lib: TermLibrary, ridge_lambda: float = 1e-6,
              threshold: float = 0.05, iters: int = 10) -> CoeffVector:
    """Estimate sparse library coefficients from a sampled trajectory.

    Derivatives come from central differences on the interior samples.
    Each state equation is solved by ridge regression followed by
    sequential thresholding: coefficients below the threshold are zeroed
    and the remainder refit on the surviving support.
    """
    if traj.n_samples < 3:
        raise ValueError("need at least 3 samples for central differences")
    if traj.n_samples < 2 * lib.size:
        warnings.warn(
            f"only {traj.n_samples} samples for a library of {lib.size} terms; "
            "recommend at least 2x the library size", stacklevel=2)
    dt = traj.dt
    dydt = (traj.y[2:] - traj.y[:-2]) / (2.0 * dt)
    phi = eval_library_batch(lib, traj.y[1:-1], traj.u[1:-1] if lib.m else None)
    n, p = lib.n, lib.size
    coeffs = np.zeros((n, p))
    for i in range(n):
        w = _ridge_solve(phi, dydt[:, i], ridge_lambda)
        prev_keep = None
        for _ in range(iters):
            keep = np.abs(w) >= threshold
            if not keep.any():
                w = np.zeros(p)
                break
            if prev_keep is not None and np.array_equal(keep, prev_keep):
                break
            w = np.zeros(p)
            w[keep] = _ridge_solve(phi[:, keep], dydt[:, i], ridge_lambda)
            prev_keep = keep
        coeffs[i] = w
    return CoeffVector.from_dense(coeffs, threshold=0.0)
