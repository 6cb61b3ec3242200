#!/usr/bin/env python3
"""Regenerate the golden test fixtures in tests/data/.

Trains the default Lotka-Volterra scenario, saves the GRU checkpoint, and
freezes the quantized forward outputs (default formats) on the scenario's
last window.  Run from the repository root:

    python3 tools/gen_golden.py
"""

import json
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from merinda.actlut import build_table
from merinda.dynamics import SYSTEMS, generate_dataset
from merinda.gru import QuantConfig, quantized_forward, save_checkpoint
from merinda.recovery.library import build_library
from merinda.recovery.train import train_merinda
from merinda.scenario import default_lv_scenario, rng_stream, true_library_coeffs


def main() -> None:
    out_dir = ROOT / "tests" / "data"
    out_dir.mkdir(parents=True, exist_ok=True)
    sc = default_lv_scenario()
    system = SYSTEMS[sc.system]()
    traj = generate_dataset(system, sc.x0, sc.theta_true, sc.dt, sc.n_samples,
                            sc.noise_std, rng_stream(sc.seed, "noise"))
    lib = build_library(system.n, system.m, sc.max_order)

    t0 = time.time()
    result = train_merinda(traj, lib, sc.train)
    elapsed = time.time() - t0
    a_true = true_library_coeffs(sc.system, sc.theta_true, lib)
    coeff_mse = float(np.mean((result.coeffs.values - a_true) ** 2))
    print(f"trained {sc.train.epochs} epochs in {elapsed:.1f}s; "
          f"coeff MSE {coeff_mse:.3e}; support match "
          f"{np.array_equal(result.coeffs.support, a_true != 0)}")

    ckpt_path = out_dir / "lv_checkpoint.json"
    save_checkpoint(result.gru, ckpt_path)
    print(f"wrote {ckpt_path}")

    qcfg = QuantConfig()
    tables = (build_table("sigmoid", out_fmt=qcfg.act_fmt),
              build_table("tanh", out_fmt=qcfg.act_fmt))
    window = traj.window(traj.n_samples - sc.train.window, sc.train.window)
    out = quantized_forward(result.gru, np.zeros(result.gru.hidden_size),
                            window.y, qcfg, tables)
    raws = np.rint(out / qcfg.act_fmt.ulp).astype(int)
    golden = {
        "checkpoint": ckpt_path.name,
        "scenario_seed": sc.seed,
        "window_start": int(traj.n_samples - sc.train.window),
        "window_length": sc.train.window,
        "activation_format": qcfg.act_fmt.descriptor(),
        "weight_format": qcfg.weight_fmt.descriptor(),
        "raw_outputs": raws.tolist(),
    }
    golden_path = out_dir / "golden_quantized.json"
    golden_path.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
    print(f"wrote {golden_path}")


if __name__ == "__main__":
    main()
