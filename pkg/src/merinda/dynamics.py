"""Benchmark dynamical systems, fixed-step RK4 integration and datasets.

The solver doubles as the SOLVE primitive inside the recovery loss, so it
is deliberately fixed-step and deterministic: classical 4-stage
Runge-Kutta with the external input held constant over each step
(zero-order hold).  Adaptive stepping is avoided on purpose.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "DynSystem",
    "Trajectory",
    "IntegrationBlowUp",
    "TrajectoryFormatError",
    "MalformedRowError",
    "RaggedRowError",
    "NonMonotonicTimeError",
    "lotka_volterra",
    "lorenz63",
    "SYSTEMS",
    "LOTKA_VOLTERRA_THETA",
    "LORENZ_THETA",
    "rk4_step",
    "solve",
    "generate_dataset",
    "save_csv",
    "load_csv",
]


class IntegrationBlowUp(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, step_index: int):
        super().__init__(f"integration blew up at step {step_index}")
        self.step_index = step_index


class TrajectoryFormatError(ValueError):
    """Base class for trajectory CSV problems."""


class MalformedRowError(TrajectoryFormatError):
    def __init__(self, row: int, detail: str):
        super().__init__(f"row {row}: {detail}")
        self.row = row


class RaggedRowError(TrajectoryFormatError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row}: expected {expected} columns, got {got}")
        self.row = row


class NonMonotonicTimeError(TrajectoryFormatError):
    def __init__(self, row: int):
        super().__init__(f"row {row}: time not strictly increasing")
        self.row = row


@dataclass(frozen=True)
class DynSystem:
    """Continuous-time system dX/dt = rhs(X, U, theta)."""

    name: str
    n: int
    m: int
    rhs: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Trajectory:
    """Uniformly sampled multivariate time series (t, Y, U)."""

    t: np.ndarray   # (N,)
    y: np.ndarray   # (N, n)
    u: np.ndarray   # (N, m), m may be 0

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.t.ndim != 1 or self.y.ndim != 2 or self.u.ndim != 2:
            raise ValueError("t must be 1-D; y and u must be 2-D")
        n = self.t.shape[0]
        if self.y.shape[0] != n or self.u.shape[0] != n:
            raise ValueError("t, y, u must have the same number of rows")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise NonMonotonicTimeError(int(np.argmin(np.diff(self.t) > 0)) + 1)
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.y))
                and np.all(np.isfinite(self.u))):
            raise ValueError("non-finite values in trajectory")

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    @property
    def state_dim(self) -> int:
        return self.y.shape[1]

    @property
    def input_dim(self) -> int:
        return self.u.shape[1]

    @property
    def dt(self) -> float:
        if self.n_samples < 2:
            raise ValueError("dt undefined for a single-sample trajectory")
        steps = np.diff(self.t)
        dt = float(steps[0])
        if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
            raise ValueError("trajectory is not uniformly sampled")
        return dt

    def window(self, start: int, length: int) -> "Trajectory":
        return Trajectory(self.t[start:start + length],
                          self.y[start:start + length],
                          self.u[start:start + length])


# ---------------------------------------------------------------------------
# Built-in systems.  Coefficients are desk-scale ground truth used by the
# test scenarios; Lorenz uses the standard chaotic parameterization.
# ---------------------------------------------------------------------------

LOTKA_VOLTERRA_THETA = np.array([1.0, 0.5, 0.3, 1.0])  # a, b, c, d
LORENZ_THETA = np.array([10.0, 28.0, 8.0 / 3.0])       # sigma, rho, beta


def lotka_volterra() -> DynSystem:
    """xdot = a x - b x y, ydot = c x y - d y."""

    def rhs(x: np.ndarray, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        a, b, c, d = theta
        return np.array([a * x[0] - b * x[0] * x[1],
                         c * x[0] * x[1] - d * x[1]])

    return DynSystem(name="lotka_volterra", n=2, m=0, rhs=rhs)


def lorenz63() -> DynSystem:
    def rhs(x: np.ndarray, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
        sigma, rho, beta = theta
        return np.array([sigma * (x[1] - x[0]),
                         x[0] * (rho - x[2]) - x[1],
                         x[0] * x[1] - beta * x[2]])

    return DynSystem(name="lorenz63", n=3, m=0, rhs=rhs)


SYSTEMS = {
    "lotka_volterra": lotka_volterra,
    "lorenz63": lorenz63,
}

_BLOWUP_LIMIT = 1e9


def rk4_step(sys: DynSystem, x: np.ndarray, u: np.ndarray, theta: np.ndarray,
             dt: float) -> np.ndarray:
    """Classical RK4 update with U held constant over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = sys.rhs(x, u, theta)
    k2 = sys.rhs(x + 0.5 * dt * k1, u, theta)
    k3 = sys.rhs(x + 0.5 * dt * k2, u, theta)
    k4 = sys.rhs(x + dt * k3, u, theta)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationBlowUp(0)
    return out


def solve(sys: DynSystem, x0: np.ndarray, theta: np.ndarray,
          u_traj: np.ndarray | None, t_grid: np.ndarray) -> Trajectory:
    """Integrate over a uniform grid; raises IntegrationBlowUp with the step index."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    n = t_grid.shape[0]
    if u_traj is None:
        u_traj = np.zeros((n, sys.m))
    u_traj = np.asarray(u_traj, dtype=np.float64)
    if u_traj.shape != (n, sys.m):
        raise ValueError(f"u_traj must be {n}x{sys.m}")
    y = np.empty((n, sys.n))
    y[0] = x0
    if n > 1:
        steps = np.diff(t_grid)
        dt = float(steps[0])
        if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
            raise ValueError("t_grid must be uniform")
        for k in range(n - 1):
            try:
                y[k + 1] = rk4_step(sys, y[k], u_traj[k], theta, dt)
            except IntegrationBlowUp as exc:
                raise IntegrationBlowUp(k + 1) from exc
            if np.max(np.abs(y[k + 1])) > _BLOWUP_LIMIT:
                raise IntegrationBlowUp(k + 1)
    return Trajectory(t=t_grid, y=y, u=u_traj)


def generate_dataset(sys: DynSystem, x0: np.ndarray, theta_true: np.ndarray,
                     dt: float, n_samples: int, noise_std: float,
                     rng: np.random.Generator | int,
                     u_traj: np.ndarray | None = None) -> Trajectory:
    """Solve the system and add i.i.d. Gaussian noise to the measurements.

    rng may be a Generator or a plain seed; either way the dataset is a
    pure function of its arguments.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    t_grid = np.arange(n_samples) * dt
    traj = solve(sys, np.asarray(x0, dtype=np.float64), theta_true, u_traj, t_grid)
    if noise_std > 0:
        traj = Trajectory(t=traj.t,
                          y=traj.y + rng.normal(0.0, noise_std, size=traj.y.shape),
                          u=traj.u)
    return traj


# ---------------------------------------------------------------------------
# CSV interchange: header t,y1..yn,u1..um, 17 significant digits so the
# round trip is bit-exact.
# ---------------------------------------------------------------------------

def _header(n: int, m: int) -> list[str]:
    return (["t"] + [f"y{i + 1}" for i in range(n)]
            + [f"u{j + 1}" for j in range(m)])


def save_csv(traj: Trajectory, path: str | Path) -> None:
    n, m = traj.state_dim, traj.input_dim
    buf = io.StringIO()
    buf.write(",".join(_header(n, m)) + "\n")
    for k in range(traj.n_samples):
        row = [traj.t[k], *traj.y[k], *traj.u[k]]
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    Path(path).write_text(buf.getvalue())


def load_csv(path: str | Path) -> Trajectory:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise MalformedRowError(0, "empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if not header or header[0] != "t":
        raise MalformedRowError(0, f"bad header {lines[0]!r}")
    n = sum(1 for h in header if h.startswith("y"))
    m = sum(1 for h in header if h.startswith("u"))
    if 1 + n + m != len(header) or n == 0:
        raise MalformedRowError(0, f"bad header {lines[0]!r}")
    width = len(header)
    rows = []
    for idx, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise RaggedRowError(idx, width, len(parts))
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise MalformedRowError(idx, str(exc)) from exc
    if not rows:
        raise MalformedRowError(1, "no data rows")
    data = np.array(rows)
    t = data[:, 0]
    diffs = np.diff(t)
    if t.shape[0] > 1 and not np.all(diffs > 0):
        raise NonMonotonicTimeError(int(np.argmax(diffs <= 0)) + 2)
    return Trajectory(t=t, y=data[:, 1:1 + n], u=data[:, 1 + n:])
