"""Recovery training loop: GRU encoder, dense coefficient head, ODE loss.

Each batch window runs through the GRU; a dense head maps the final hidden
state to one coefficient vector per window.  The ODE loss is evaluated on
the batch-mean coefficient estimate against every window, which couples
the windows and forces a single consistent model instead of S_B unrelated
per-window fits.  Optimization is Adam over all GRU and head parameters;
the coefficient gradient comes from the discrete adjoint of the RK4
unroll and flows back through the head and BPTT.

The head is linear (signed) by default.  A ReLU head cannot emit negative
coefficients, so it is only offered as an explicit mode switch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import Trajectory
from ..gru import GruParams, bptt, init_params, seq_forward
from .library import CoeffVector, TermLibrary
from .odeloss import ode_loss, ode_loss_grad

__all__ = [
    "DenseHead",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "init_head",
    "build_windows",
    "merinda_forward",
    "train_merinda",
    "reconstruction_mse",
    "baseline_mse",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class DenseHead:
    """Linear map from the hidden state to flattened coefficients."""

    weights: np.ndarray      # (n*p) x V
    bias: np.ndarray         # (n*p,)
    activation: str = "identity"   # or "relu"

    def forward(self, h: np.ndarray) -> np.ndarray:
        pre = self.weights @ h + self.bias
        if self.activation == "relu":
            return np.maximum(pre, 0.0)
        return pre

    def backward(self, h: np.ndarray, d_out: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (d_weights, d_bias, d_h)."""
        if self.activation == "relu":
            pre = self.weights @ h + self.bias
            d_out = np.where(pre > 0, d_out, 0.0)
        return np.outer(d_out, h), d_out.copy(), self.weights.T @ d_out


def init_head(out_dim: int, hidden_size: int, rng: np.random.Generator,
              activation: str = "identity", scale: float = 0.01) -> DenseHead:
    if activation not in ("identity", "relu"):
        raise ValueError(f"unknown head activation {activation!r}")
    return DenseHead(
        weights=rng.uniform(-scale, scale, size=(out_dim, hidden_size)),
        bias=np.zeros(out_dim),
        activation=activation,
    )


@dataclass
class TrainConfig:
    window: int = 50            # samples per batch window (k)
    batch_size: int = 8         # number of windows (S_B)
    epochs: int = 1500
    learning_rate: float = 1e-2
    threshold: float = 0.05     # final sparsification threshold
    l1_weight: float = 1e-4     # sparsity penalty on the coefficient estimate
    data_weight: float = 1.0    # weight on the ODE reconstruction term
    hidden_size: int = 16
    seed: int = 0
    head_activation: str = "identity"
    init_coeffs: np.ndarray | None = None   # optional head-bias warm start

    def validate(self) -> None:
        if self.window < 2 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("window >= 2, batch_size >= 1, epochs >= 0 required")
        if self.learning_rate <= 0 or self.threshold < 0 or self.l1_weight < 0:
            raise ValueError("rates and penalties must be non-negative")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be positive")


@dataclass
class TrainResult:
    coeffs: CoeffVector                 # thresholded estimate
    dense_coeffs: np.ndarray            # pre-threshold batch-mean estimate
    log: list[dict]
    gru: GruParams
    head: DenseHead
    window_starts: np.ndarray


def build_windows(traj: Trajectory, window: int, batch_size: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Batch tensor of shape S_B x (n+m) x window, with evenly spaced starts."""
    if traj.n_samples < window:
        raise ValueError(f"trajectory too short for window {window}")
    if batch_size == 1:
        starts = np.array([0])
    else:
        starts = np.linspace(0, traj.n_samples - window, batch_size).astype(int)
    feats = np.hstack([traj.y, traj.u]) if traj.input_dim else traj.y
    tensor = np.stack([feats[s:s + window].T for s in starts])
    return tensor, starts


def merinda_forward(gru: GruParams, head: DenseHead, batch: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient estimates for a batch tensor (S_B x channels x window).

    Returns (thetas, hidden): per-window flattened coefficients and the
    final hidden states they came from.
    """
    if batch.ndim != 3:
        raise ValueError("batch must be S_B x channels x window")
    if batch.shape[1] != gru.input_size:
        raise ValueError(
            f"batch channel count {batch.shape[1]} != GRU input size {gru.input_size}")
    h0 = np.zeros(gru.hidden_size)
    thetas = []
    hidden = []
    for w in range(batch.shape[0]):
        hs, _ = seq_forward(gru, h0, batch[w].T)
        hidden.append(hs[-1])
        thetas.append(head.forward(hs[-1]))
    return np.array(thetas), np.array(hidden)


class _Adam:
    def __init__(self, arrays: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        for i, (a, g) in enumerate(zip(self.arrays, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            a -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _param_list(gru: GruParams, head: DenseHead) -> list[np.ndarray]:
    arrs = gru.arrays()
    return [arrs[k] for k in sorted(arrs)] + [head.weights, head.bias]


def baseline_mse(windows: list[Trajectory]) -> float:
    """Reconstruction MSE of the all-zero model (trajectory frozen at Y(0))."""
    return float(np.mean([np.mean((w.y - w.y[0]) ** 2) for w in windows]))


def reconstruction_mse(coeffs, windows: list[Trajectory], lib: TermLibrary,
                       dt: float | None = None) -> float:
    return float(np.mean([ode_loss(coeffs, w, lib, dt) for w in windows]))


def train_merinda(traj: Trajectory, lib: TermLibrary, cfg: TrainConfig
                  ) -> TrainResult:
    """Fit sparse library coefficients by gradient descent on the ODE loss.

    Deterministic for a fixed cfg.seed.  Raises TrainingDiverged if the
    loss leaves the finite range even after blow-up penalties.
    """
    cfg.validate()
    if traj.state_dim != lib.n or traj.input_dim != lib.m:
        raise ValueError("trajectory dimensions do not match the library")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    q = lib.n * lib.size
    gru = init_params(cfg.hidden_size, lib.n + lib.m, rng)
    head = init_head(q, cfg.hidden_size, rng, activation=cfg.head_activation)
    if cfg.init_coeffs is not None:
        init_flat = np.asarray(cfg.init_coeffs, dtype=np.float64).reshape(-1)
        if init_flat.shape != (q,):
            raise ValueError(f"init_coeffs must have {q} entries")
        head.bias = init_flat.copy()
        head.weights = np.zeros_like(head.weights)

    batch, starts = build_windows(traj, cfg.window, cfg.batch_size)
    windows = [traj.window(int(s), cfg.window) for s in starts]
    dt = traj.dt
    params = _param_list(gru, head)
    opt = _Adam(params, cfg.learning_rate)
    s_b = len(windows)
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        hs, tapes = [], []
        for w in range(s_b):
            seq, tape = seq_forward(gru, np.zeros(cfg.hidden_size), batch[w].T)
            hs.append(seq[-1])
            tapes.append(tape)
        thetas = [head.forward(h) for h in hs]
        theta_bar = np.mean(thetas, axis=0)
        a_est = theta_bar.reshape(lib.n, lib.size)

        ode_total = 0.0
        d_abar = np.zeros_like(a_est)
        for w in range(s_b):
            loss_w, grad_w = ode_loss_grad(a_est, windows[w], lib, dt)
            ode_total += loss_w
            d_abar += grad_w
        ode_total = cfg.data_weight * ode_total / s_b
        d_abar = cfg.data_weight * d_abar / s_b
        l1_term = cfg.l1_weight * float(np.sum(np.abs(theta_bar)))
        total = ode_total + l1_term
        if not np.isfinite(total):
            raise TrainingDiverged(epoch)

        d_theta_bar = d_abar.reshape(-1) + cfg.l1_weight * np.sign(theta_bar)
        gsum: list[np.ndarray] | None = None
        for w in range(s_b):
            d_theta_w = d_theta_bar / s_b
            d_hw, d_hb, d_h = head.backward(hs[w], d_theta_w)
            g, _, _ = bptt(gru, tapes[w],
                           np.vstack([np.zeros((cfg.window - 1, cfg.hidden_size)), d_h]))
            arrs = g.arrays()
            gs = [arrs[k] for k in sorted(arrs)] + [d_hw, d_hb]
            gsum = gs if gsum is None else [a + b for a, b in zip(gsum, gs)]
        opt.step(gsum)
        log.append({"epoch": epoch, "loss": total, "ode_mse": ode_total, "l1": l1_term})

    thetas, _ = merinda_forward(gru, head, batch)
    dense = np.mean(thetas, axis=0).reshape(lib.n, lib.size)
    coeffs = CoeffVector.from_dense(dense, threshold=cfg.threshold)
    return TrainResult(coeffs=coeffs, dense_coeffs=dense, log=log, gru=gru,
                       head=head, window_starts=starts)
