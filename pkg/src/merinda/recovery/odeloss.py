"""ODE reconstruction loss and its discrete adjoint.

The loss integrates the library dynamics dX/dt = A phi(X, U) from the
window's first sample with the window's own RK4 grid and returns the mean
squared error against the measured trace.  Gradients with respect to A are
the exact reverse-mode derivative of the unrolled RK4 recurrence (discrete
adjoint), so they match finite differences of this exact loss rather than
any continuous-time approximation.

If the candidate coefficients blow the integration up, the loss returns a
large finite penalty ordered so that exploding earlier costs more, and the
gradient is zero for that window.
"""

from __future__ import annotations

import numpy as np

from ..dynamics import Trajectory
from .library import (
    TermLibrary,
    eval_library,
    eval_library_batch,
    library_state_jacobian_batch,
)

__all__ = ["ode_loss", "ode_loss_grad", "adjoint_grad_check", "BLOWUP_PENALTY"]

BLOWUP_PENALTY = 1e6
_STATE_LIMIT = 1e9


def _coeff_matrix(coeffs, lib: TermLibrary) -> np.ndarray:
    a = np.asarray(getattr(coeffs, "values", coeffs), dtype=np.float64)
    if a.shape != (lib.n, lib.size):
        raise ValueError(f"coefficients must be {lib.n}x{lib.size}, got {a.shape}")
    return a


def _forward(a: np.ndarray, window: Trajectory, lib: TermLibrary, dt: float):
    """Unrolled RK4 over the window grid, keeping stage points for the adjoint.

    Returns (X, stages, blow_step); stages[j] is the 4 x n stage-state block
    for step j.  blow_step is the first non-finite step index or None.
    """
    k = window.n_samples
    n = lib.n
    x = np.empty((k, n))
    x[0] = window.y[0]
    stages: list[np.ndarray] = []
    for j in range(k - 1):
        u = window.u[j] if lib.m else None
        x1 = x[j]
        pts = np.empty((4, n))
        pts[0] = x1
        k1 = a @ eval_library(lib, pts[0], u)
        pts[1] = x1 + 0.5 * dt * k1
        k2 = a @ eval_library(lib, pts[1], u)
        pts[2] = x1 + 0.5 * dt * k2
        k3 = a @ eval_library(lib, pts[2], u)
        pts[3] = x1 + dt * k3
        k4 = a @ eval_library(lib, pts[3], u)
        x[j + 1] = x1 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        stages.append(pts)
        if not np.all(np.isfinite(x[j + 1])) or np.max(np.abs(x[j + 1])) > _STATE_LIMIT:
            return x, stages, j + 1
    return x, stages, None


def _penalty(blow_step: int, total_steps: int) -> float:
    # earlier blow-up -> larger penalty, all values finite and > BLOWUP_PENALTY
    return BLOWUP_PENALTY * (2.0 - blow_step / max(total_steps, 1))


def ode_loss(coeffs, window: Trajectory, lib: TermLibrary,
             dt: float | None = None) -> float:
    """Mean squared error between the window trace and its re-integration.

    dt defaults to the window's own grid spacing; pass the parent
    trajectory's dt when the window was sliced out of a longer record so
    the re-integration uses the exact generating step.
    """
    a = _coeff_matrix(coeffs, lib)
    k = window.n_samples
    if k < 2:
        return 0.0
    x, _, blow = _forward(a, window, lib, window.dt if dt is None else dt)
    if blow is not None:
        return _penalty(blow, k - 1)
    return float(np.mean((x - window.y) ** 2))


def ode_loss_grad(coeffs, window: Trajectory, lib: TermLibrary,
                  dt: float | None = None) -> tuple[float, np.ndarray]:
    """Loss and dLoss/dA via the discrete adjoint of the RK4 unroll."""
    a = _coeff_matrix(coeffs, lib)
    k = window.n_samples
    grad = np.zeros_like(a)
    if k < 2:
        return 0.0, grad
    dt = window.dt if dt is None else dt
    x, stages, blow = _forward(a, window, lib, dt)
    if blow is not None:
        return _penalty(blow, k - 1), grad
    scale = 1.0 / (k * lib.n)
    loss = float(np.sum((x - window.y) ** 2) * scale)
    lam = 2.0 * scale * (x[k - 1] - window.y[k - 1])
    for j in range(k - 2, -1, -1):
        u = window.u[j] if lib.m else None
        pts = stages[j]
        us = None if u is None else np.repeat(u[None, :], 4, axis=0)
        phis = eval_library_batch(lib, pts, us)
        jacs = a @ library_state_jacobian_batch(lib, pts, us)  # 4 x n x n
        dx_total = lam.copy()
        dk4 = (dt / 6.0) * lam
        dx4 = jacs[3].T @ dk4
        grad += np.outer(dk4, phis[3])
        dx_total += dx4
        dk3 = (dt / 3.0) * lam + dt * dx4
        dx3 = jacs[2].T @ dk3
        grad += np.outer(dk3, phis[2])
        dx_total += dx3
        dk2 = (dt / 3.0) * lam + 0.5 * dt * dx3
        dx2 = jacs[1].T @ dk2
        grad += np.outer(dk2, phis[1])
        dx_total += dx2
        dk1 = (dt / 6.0) * lam + 0.5 * dt * dx2
        dx1 = jacs[0].T @ dk1
        grad += np.outer(dk1, phis[0])
        dx_total += dx1
        lam = dx_total + 2.0 * scale * (x[j] - window.y[j])
    return loss, grad


def adjoint_grad_check(coeffs, window: Trajectory, lib: TermLibrary,
                       fd_step: float = 1e-6) -> float:
    """Max relative error of the adjoint gradient against central differences."""
    a = _coeff_matrix(coeffs, lib)
    _, grad = ode_loss_grad(a, window, lib)
    if window.n_samples < 2:
        return 0.0 if not grad.any() else float("inf")
    worst = 0.0
    for i in range(a.shape[0]):
        for t in range(a.shape[1]):
            ap = a.copy()
            ap[i, t] += fd_step
            am = a.copy()
            am[i, t] -= fd_step
            fd = (ode_loss(ap, window, lib) - ode_loss(am, window, lib)) / (2 * fd_step)
            err = abs(grad[i, t] - fd)
            denom = max(abs(fd), abs(grad[i, t]), 1e-10)
            worst = max(worst, err / denom)
    return worst
