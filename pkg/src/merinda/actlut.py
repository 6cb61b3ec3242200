"""Table-based sigmoid/tanh activation units.

Activations are evaluated from a quantized table in constant time, either
by nearest entry or by piecewise-linear interpolation between adjacent
entries (the default; it meets the error budget with 1024 entries).
Inputs outside the table domain clamp to the nearest endpoint, matching
saturating activations.  Entry i samples f(x_min + i*step) with
step = (x_max - x_min) / (size - 1), so both endpoints are table entries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fxp import (
    DEFAULT_WEIGHT_FORMAT,
    FxFormat,
    FxValue,
    dequantize_array,
    parse_format,
    quantize,
    quantize_array,
)

__all__ = [
    "ActTable",
    "build_table",
    "eval_table",
    "eval_table_batch",
    "table_to_json",
    "table_from_json",
    "save_table",
    "load_table",
    "sigmoid",
]

KINDS = ("sigmoid", "tanh")
MODES = ("pwl", "nearest")

DEFAULT_DOMAIN = (-8.0, 8.0)
DEFAULT_SIZE = 1024


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


_EXACT = {"sigmoid": sigmoid, "tanh": math.tanh}


@dataclass(frozen=True)
class ActTable:
    kind: str
    mode: str
    x_min: float
    x_max: float
    out_fmt: FxFormat
    entries: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def step(self) -> float:
        return (self.x_max - self.x_min) / (self.size - 1)


def build_table(kind: str, size: int = DEFAULT_SIZE,
                domain: tuple[float, float] = DEFAULT_DOMAIN,
                out_fmt: FxFormat = DEFAULT_WEIGHT_FORMAT,
                mode: str = "pwl") -> ActTable:
    """Sample and quantize the activation over a uniform grid.

    size must be a power of two (>= 2) so the index computation reduces to
    taking the top bits of the clamped input in a hardware port.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown activation kind {kind!r}")
    if mode not in MODES:
        raise ValueError(f"unknown table mode {mode!r}")
    if size < 2 or size & (size - 1):
        raise ValueError(f"size must be a power of two >= 2, got {size}")
    x_min, x_max = float(domain[0]), float(domain[1])
    if not (math.isfinite(x_min) and math.isfinite(x_max)) or x_min >= x_max:
        raise ValueError(f"degenerate domain [{x_min}, {x_max}]")
    f = _EXACT[kind]
    step = (x_max - x_min) / (size - 1)
    entries = tuple(quantize(f(x_min + i * step), out_fmt).raw for i in range(size))
    return ActTable(kind, mode, x_min, x_max, out_fmt, entries)


def eval_table(table: ActTable, x: FxValue | float) -> FxValue:
    """Constant-time activation lookup; clamps x to the table domain."""
    xv = x.value if isinstance(x, FxValue) else float(x)
    xc = min(max(xv, table.x_min), table.x_max)
    u = (xc - table.x_min) / table.step
    fmt = table.out_fmt
    if table.mode == "nearest":
        idx = min(int(math.floor(u + 0.5)), table.size - 1)
        return FxValue(table.entries[idx], fmt)
    i0 = min(int(math.floor(u)), table.size - 2)
    t = u - i0
    e0 = table.entries[i0] * fmt.ulp
    e1 = table.entries[i0 + 1] * fmt.ulp
    return quantize(e0 + t * (e1 - e0), fmt)


def eval_table_batch(table: ActTable, xs: np.ndarray) -> np.ndarray:
    """Vectorised eval_table over real-valued inputs; returns int64 raws.

    Bit-identical to looping eval_table (same float expressions).
    """
    xs = np.asarray(xs, dtype=np.float64)
    xc = np.clip(xs, table.x_min, table.x_max)
    u = (xc - table.x_min) / table.step
    entries = np.asarray(table.entries, dtype=np.int64)
    fmt = table.out_fmt
    if table.mode == "nearest":
        idx = np.minimum(np.floor(u + 0.5).astype(np.int64), table.size - 1)
        return entries[idx]
    i0 = np.minimum(np.floor(u).astype(np.int64), table.size - 2)
    t = u - i0
    e0 = dequantize_array(entries[i0], fmt)
    e1 = dequantize_array(entries[i0 + 1], fmt)
    return quantize_array(e0 + t * (e1 - e0), fmt)


def table_to_json(table: ActTable) -> dict:
    return {
        "kind": table.kind,
        "mode": table.mode,
        "size": table.size,
        "domain": [table.x_min, table.x_max],
        "format": table.out_fmt.descriptor(),
        "entries": list(table.entries),
    }


def table_from_json(data: dict) -> ActTable:
    fmt = parse_format(data["format"])
    return ActTable(
        kind=data["kind"],
        mode=data["mode"],
        x_min=float(data["domain"][0]),
        x_max=float(data["domain"][1]),
        out_fmt=fmt,
        entries=tuple(int(e) for e in data["entries"]),
    )


def save_table(table: ActTable, path: str | Path) -> None:
    Path(path).write_text(json.dumps(table_to_json(table), sort_keys=True) + "\n")


def load_table(path: str | Path) -> ActTable:
    return table_from_json(json.loads(Path(path).read_text()))
