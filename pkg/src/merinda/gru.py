"""GRU cell and sequence engine.

Float64 reference with full backpropagation through time, plus a quantized
forward path that composes the fixed-point MACs and table activations in
the same four-stage order as the accelerator pipeline:

    stage 1  gate affines        a_r = W_r x + U_r h + b_r   (MACs)
    stage 2  sigmoid             r = s(a_r), z = s(a_z)      (table)
    stage 3  candidate           c = tanh(W_h x + U_h (r*h) + b_h)
    stage 4  interpolation       h' = (1 - z)*c + z*h

The reset gate modulates the *argument* of U_h, i.e. U_h(r * h_prev);
frameworks differ on this point so it is fixed here explicitly.  The
update gate z blends old state against the candidate, so z == 1 keeps the
state unchanged.  MAC accumulation order is bias first, then input-major,
then hidden-major, fixed for cross-run determinism.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .actlut import ActTable, eval_table_batch
from .fxp import (
    ACCUMULATOR_FRAC_CAP,
    DEFAULT_ACCUMULATOR_BITS,
    DEFAULT_ACTIVATION_FORMAT,
    DEFAULT_WEIGHT_FORMAT,
    FxFormat,
    clamp_array,
    dequantize_array,
    quantize_array,
    rne_shift_right_array,
)

__all__ = [
    "GruParams",
    "GruTape",
    "QuantConfig",
    "init_params",
    "cell_forward",
    "seq_forward",
    "bptt",
    "zero_grads",
    "quantized_forward",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "gru-checkpoint/1"

_MATRIX_FIELDS = ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h")
_BIAS_FIELDS = ("b_r", "b_z", "b_h")


@dataclass
class GruParams:
    """Gate weight matrices (V x d_in), recurrent matrices (V x V), biases (V)."""

    w_r: np.ndarray
    w_z: np.ndarray
    w_h: np.ndarray
    u_r: np.ndarray
    u_z: np.ndarray
    u_h: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_r.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_r.shape[1]

    def validate(self) -> None:
        v, d = self.hidden_size, self.input_size
        for name in ("w_r", "w_z", "w_h"):
            if getattr(self, name).shape != (v, d):
                raise ValueError(f"{name} must be {v}x{d}")
        for name in ("u_r", "u_z", "u_h"):
            if getattr(self, name).shape != (v, v):
                raise ValueError(f"{name} must be {v}x{v}")
        for name in _BIAS_FIELDS:
            if getattr(self, name).shape != (v,):
                raise ValueError(f"{name} must have length {v}")
        for f in fields(self):
            if not np.all(np.isfinite(getattr(self, f.name))):
                raise ValueError(f"non-finite entries in {f.name}")

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_params(hidden_size: int, input_size: int, rng: np.random.Generator) -> GruParams:
    """uniform(-1/sqrt(V), 1/sqrt(V)) weights, zero biases."""
    s = 1.0 / np.sqrt(hidden_size)

    def mat(rows: int, cols: int) -> np.ndarray:
        return rng.uniform(-s, s, size=(rows, cols))

    return GruParams(
        w_r=mat(hidden_size, input_size),
        w_z=mat(hidden_size, input_size),
        w_h=mat(hidden_size, input_size),
        u_r=mat(hidden_size, hidden_size),
        u_z=mat(hidden_size, hidden_size),
        u_h=mat(hidden_size, hidden_size),
        b_r=np.zeros(hidden_size),
        b_z=np.zeros(hidden_size),
        b_h=np.zeros(hidden_size),
    )


def zero_grads(p: GruParams) -> GruParams:
    return GruParams(**{k: np.zeros_like(v) for k, v in p.arrays().items()})


@dataclass
class GruTape:
    """Per-step cache for BPTT: inputs, gates, candidates and all states."""

    xs: np.ndarray      # T x d_in
    hs: np.ndarray      # (T+1) x V, hs[0] == h0
    r: np.ndarray       # T x V
    z: np.ndarray       # T x V
    c: np.ndarray       # T x V

    def __len__(self) -> int:
        return self.xs.shape[0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def cell_forward(p: GruParams, h_prev: np.ndarray, x: np.ndarray
                 ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """One GRU step; returns the new state and the step cache."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != (p.input_size,):
        raise ValueError(f"input must have length {p.input_size}, got {x.shape}")
    if h_prev.shape != (p.hidden_size,):
        raise ValueError(f"state must have length {p.hidden_size}, got {h_prev.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h_prev))):
        raise ValueError("non-finite input to cell_forward")
    r = _sigmoid(p.w_r @ x + p.u_r @ h_prev + p.b_r)
    z = _sigmoid(p.w_z @ x + p.u_z @ h_prev + p.b_z)
    c = np.tanh(p.w_h @ x + p.u_h @ (r * h_prev) + p.b_h)
    h = (1.0 - z) * c + z * h_prev
    return h, {"r": r, "z": z, "c": c}


def seq_forward(p: GruParams, h0: np.ndarray, xs: np.ndarray
                ) -> tuple[np.ndarray, GruTape]:
    """Fold cell_forward over a sequence; returns all states h_1..h_T and the tape."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("xs must be a non-empty T x d_in array")
    T = xs.shape[0]
    V = p.hidden_size
    tape = GruTape(
        xs=xs,
        hs=np.empty((T + 1, V)),
        r=np.empty((T, V)),
        z=np.empty((T, V)),
        c=np.empty((T, V)),
    )
    tape.hs[0] = h0
    h = np.asarray(h0, dtype=np.float64)
    for t in range(T):
        h, cache = cell_forward(p, h, xs[t])
        tape.r[t], tape.z[t], tape.c[t] = cache["r"], cache["z"], cache["c"]
        tape.hs[t + 1] = h
    return tape.hs[1:], tape


def bptt(p: GruParams, tape: GruTape, dl_dh: np.ndarray
         ) -> tuple[GruParams, np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients of the forward recurrence.

    dl_dh holds the upstream gradient for every step (T x V); pass zeros
    for steps that do not feed the loss.  Returns (parameter gradients,
    dL/dh0, dL/dx per step).
    """
    dl_dh = np.asarray(dl_dh, dtype=np.float64)
    T = len(tape)
    if dl_dh.shape != (T, p.hidden_size):
        raise ValueError(f"upstream gradient must be {T}x{p.hidden_size}")
    g = zero_grads(p)
    dxs = np.empty_like(tape.xs)
    dh = np.zeros(p.hidden_size)
    for t in range(T - 1, -1, -1):
        dh = dh + dl_dh[t]
        x, h_prev = tape.xs[t], tape.hs[t]
        r, z, c = tape.r[t], tape.z[t], tape.c[t]
        dc = dh * (1.0 - z)
        dz = dh * (h_prev - c)
        dh_prev = dh * z
        dac = dc * (1.0 - c * c)
        daz = dz * z * (1.0 - z)
        s = r * h_prev
        ds = p.u_h.T @ dac
        dr = ds * h_prev
        dh_prev = dh_prev + ds * r
        dar = dr * r * (1.0 - r)
        dh_prev = dh_prev + p.u_r.T @ dar + p.u_z.T @ daz
        dxs[t] = p.w_r.T @ dar + p.w_z.T @ daz + p.w_h.T @ dac
        g.w_r += np.outer(dar, x)
        g.u_r += np.outer(dar, h_prev)
        g.b_r += dar
        g.w_z += np.outer(daz, x)
        g.u_z += np.outer(daz, h_prev)
        g.b_z += daz
        g.w_h += np.outer(dac, x)
        g.u_h += np.outer(dac, s)
        g.b_h += dac
        dh = dh_prev
    return g, dh, dxs


# ---------------------------------------------------------------------------
# Quantized forward path
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantConfig:
    """Datapath formats for the quantized forward pass.

    The accumulator keeps the full product fraction when it fits the
    32-bit width, otherwise products are RNE-rounded into a capped
    fraction (ACCUMULATOR_FRAC_CAP) so at least 8 integer bits of
    saturation headroom remain.
    """

    act_fmt: FxFormat = DEFAULT_ACTIVATION_FORMAT
    weight_fmt: FxFormat = DEFAULT_WEIGHT_FORMAT
    acc_total_bits: int = DEFAULT_ACCUMULATOR_BITS

    def __post_init__(self) -> None:
        acc = self.acc_fmt
        # int64 must hold every aligned product: raws are bounded by
        # 2^(total-1), so a product has 2(total-1) magnitude bits plus any
        # upshift toward the accumulator fraction.
        act_bits, w_bits = self.act_fmt.total_bits - 1, self.weight_fmt.total_bits - 1
        mac_bits = act_bits + w_bits + max(
            0, acc.frac_bits - self.act_fmt.frac_bits - self.weight_fmt.frac_bits)
        blend_bits = 2 * act_bits + max(0, acc.frac_bits - 2 * self.act_fmt.frac_bits)
        if max(mac_bits, blend_bits) > 62:
            raise ValueError("format combination overflows the 64-bit model datapath")

    @property
    def acc_fmt(self) -> FxFormat:
        frac = min(self.act_fmt.frac_bits + self.weight_fmt.frac_bits,
                   ACCUMULATOR_FRAC_CAP)
        return FxFormat(self.acc_total_bits, frac)


def _mac_columns(acc: np.ndarray, w_raw: np.ndarray, v_raw: np.ndarray,
                 shift: int, acc_fmt: FxFormat) -> np.ndarray:
    # In-order saturating MAC over the operand index, vectorised across rows.
    out = acc.copy()
    for j in range(w_raw.shape[1]):
        prod = w_raw[:, j] * v_raw[j]
        prod = rne_shift_right_array(prod, shift)
        out = clamp_array(out + prod, acc_fmt)
    return out


def quantized_forward(p: GruParams, h0: np.ndarray, xs: np.ndarray,
                      qcfg: QuantConfig,
                      tables: tuple[ActTable, ActTable]) -> np.ndarray:
    """Fixed-point forward pass; returns dequantized states (T x V).

    Weights/biases are quantized once, inputs per step.  Gate tables must
    be (sigmoid, tanh) with out_fmt equal to the activation format.  The
    returned floats are exact representations of the underlying raws, so
    comparisons against them are bit-faithful.
    """
    sig_table, tanh_table = tables
    act, wfmt, acc = qcfg.act_fmt, qcfg.weight_fmt, qcfg.acc_fmt
    for tbl, kind in ((sig_table, "sigmoid"), (tanh_table, "tanh")):
        if tbl.kind != kind:
            raise ValueError(f"expected a {kind} table, got {tbl.kind}")
        if tbl.out_fmt != act:
            raise ValueError(
                f"table format {tbl.out_fmt.descriptor()} != activation format "
                f"{act.descriptor()}")
    xs = np.asarray(xs, dtype=np.float64)
    w = {k: quantize_array(v, wfmt) for k, v in p.arrays().items() if k in _MATRIX_FIELDS}
    b = {k: quantize_array(v, acc) for k, v in p.arrays().items() if k in _BIAS_FIELDS}
    # alignment shifts from product fractions into the accumulator fraction
    wa_shift = wfmt.frac_bits + act.frac_bits - acc.frac_bits
    s4_shift = 2 * act.frac_bits - acc.frac_bits
    one = quantize_array(np.array([1.0]), act)[0]

    h = quantize_array(np.asarray(h0, dtype=np.float64), act)
    out = np.empty((xs.shape[0], p.hidden_size))
    for t in range(xs.shape[0]):
        xq = quantize_array(xs[t], act)
        # stage 1: gate affines
        pre_r = _mac_columns(_mac_columns(b["b_r"], w["w_r"], xq, wa_shift, acc),
                             w["u_r"], h, wa_shift, acc)
        pre_z = _mac_columns(_mac_columns(b["b_z"], w["w_z"], xq, wa_shift, acc),
                             w["u_z"], h, wa_shift, acc)
        # stage 2: sigmoid tables + reset modulation
        r = eval_table_batch(sig_table, dequantize_array(pre_r, acc))
        z = eval_table_batch(sig_table, dequantize_array(pre_z, acc))
        rh = clamp_array(rne_shift_right_array(r * h, act.frac_bits), act)
        # stage 3: candidate affine + tanh table
        pre_c = _mac_columns(_mac_columns(b["b_h"], w["w_h"], xq, wa_shift, acc),
                             w["u_h"], rh, wa_shift, acc)
        c = eval_table_batch(tanh_table, dequantize_array(pre_c, acc))
        # stage 4: two MACs into the accumulator, (1-z)*c + z*h, then requantize
        omz = clamp_array(one - z, act)
        acc4 = clamp_array(rne_shift_right_array(omz * c, s4_shift), acc)
        acc4 = clamp_array(acc4 + rne_shift_right_array(z * h, s4_shift), acc)
        h = clamp_array(
            rne_shift_right_array(acc4, acc.frac_bits - act.frac_bits), act)
        out[t] = dequantize_array(h, act)
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(p: GruParams, path: str | Path) -> None:
    p.validate()
    data = {
        "format": CHECKPOINT_FORMAT,
        "hidden_size": p.hidden_size,
        "input_size": p.input_size,
    }
    for name, arr in p.arrays().items():
        data[name] = [float(x) for x in arr.reshape(-1)]
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> GruParams:
    data = json.loads(Path(path).read_text())
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {data.get('format')!r}")
    v, d = int(data["hidden_size"]), int(data["input_size"])
    shapes = {name: (v, d) for name in ("w_r", "w_z", "w_h")}
    shapes.update({name: (v, v) for name in ("u_r", "u_z", "u_h")})
    shapes.update({name: (v,) for name in _BIAS_FIELDS})
    arrays = {
        name: np.array(data[name], dtype=np.float64).reshape(shape)
        for name, shape in shapes.items()
    }
    p = GruParams(**arrays)
    p.validate()
    return p
