"""Sparse model recovery with a GRU-flow surrogate and an FPGA dataflow model.

Subpackages and modules:

- fxp       Q-format fixed-point arithmetic (saturating, round-to-nearest-even)
- actlut    table-based sigmoid/tanh activation units
- gru       float GRU with BPTT plus the quantized forward path
- dynamics  benchmark systems, RK4 integration, CSV datasets
- recovery  term library, SINDy baseline, ODE loss and training loop
- hwmodel   pipeline initiation-interval / throughput / energy model
- cli       reproducible experiment commands
"""

from .fxp import FxFormat, FxValue, parse_format
from .dynamics import DynSystem, Trajectory

__version__ = "0.1.0"

__all__ = ["FxFormat", "FxValue", "parse_format", "DynSystem", "Trajectory", "__version__"]
