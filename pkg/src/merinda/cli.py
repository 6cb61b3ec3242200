"""Command-line entry point: generate / recover / hwreport / quantize-eval.

Every command is deterministic for a fixed scenario seed; timestamps only
ever appear in .meta.json sidecars, so primary outputs are byte-identical
across re-runs.  Exit codes: 0 success, 1 IO or runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import hwmodel
from .actlut import build_table
from .dynamics import SYSTEMS, generate_dataset, load_csv, save_csv
from .fxp import parse_format
from .gru import QuantConfig, load_checkpoint, quantized_forward, save_checkpoint, seq_forward
from .recovery.library import build_library
from .recovery.sindy import sindy_fit
from .recovery.train import baseline_mse, build_windows, reconstruction_mse, train_merinda
from .scenario import (
    Scenario,
    load_scenario,
    rng_stream,
    scenario_to_json,
    true_library_coeffs,
)

__all__ = ["main"]

_FIXTURES = {
    "designs": hwmodel.design_fixture,
    "mappings": hwmodel.mapping_fixture,
    # legacy aliases
    "table4": hwmodel.design_fixture,
    "table3": hwmodel.mapping_fixture,
}


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(path: Path, extra: dict) -> None:
    meta = {"created": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    meta.update(extra)
    _write_json(path.with_suffix(path.suffix + ".meta.json"), meta)


def _traj_path(out: Path, sc: Scenario) -> Path:
    return out / f"{sc.name}.csv"


def _load_scenario_arg(args: argparse.Namespace) -> Scenario:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc.seed = args.seed
        sc.train.seed = args.seed
    return sc


def _generate_traj(sc: Scenario):
    system = SYSTEMS[sc.system]()
    rng = rng_stream(sc.seed, "noise")
    return generate_dataset(system, sc.x0, sc.theta_true, sc.dt, sc.n_samples,
                            sc.noise_std, rng)


def cmd_generate(args: argparse.Namespace) -> int:
    sc = _load_scenario_arg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = _generate_traj(sc)
    path = _traj_path(out, sc)
    save_csv(traj, path)
    _sidecar(path, {"scenario": scenario_to_json(sc), "command": "generate"})
    print(f"wrote {path} ({traj.n_samples} samples)")
    return 0


def _coeff_metrics(coeffs, dense, sc: Scenario, lib, windows, dt) -> dict:
    a_true = true_library_coeffs(sc.system, sc.theta_true, lib)
    recon = reconstruction_mse(coeffs, windows, lib, dt)
    base = baseline_mse(windows)
    return {
        "coefficient_mse": float(np.mean((coeffs.values - a_true) ** 2)),
        "coefficient_mse_dense": float(np.mean((dense - a_true) ** 2)),
        "reconstruction_mse": recon,
        "baseline_mse": base,
        "baseline_over_reconstruction": float(base / recon) if recon > 0 else None,
        "support_match": bool(np.array_equal(coeffs.support, a_true != 0)),
    }


def cmd_recover(args: argparse.Namespace) -> int:
    sc = _load_scenario_arg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj_path = Path(args.trajectory) if args.trajectory else _traj_path(out, sc)
    if not traj_path.exists():
        raise FileNotFoundError(
            f"trajectory {traj_path} not found; run the generate command first")
    traj = load_csv(traj_path)
    system = SYSTEMS[sc.system]()
    lib = build_library(system.n, system.m, sc.max_order)
    _, starts = build_windows(traj, sc.train.window, sc.train.batch_size)
    windows = [traj.window(int(s), sc.train.window) for s in starts]

    report: dict = {
        "method": args.method,
        "scenario": scenario_to_json(sc),
        "library": {"n": lib.n, "m": lib.m, "max_order": lib.max_order,
                    "size": lib.size, "terms": lib.labels()},
    }
    if args.method == "sindy":
        coeffs = sindy_fit(traj, lib, ridge_lambda=sc.sindy_ridge_lambda,
                           threshold=sc.sindy_threshold, iters=sc.sindy_iters)
        dense = coeffs.values
        report["config"] = {"ridge_lambda": sc.sindy_ridge_lambda,
                            "threshold": sc.sindy_threshold, "iters": sc.sindy_iters}
    else:
        result = train_merinda(traj, lib, sc.train)
        coeffs, dense = result.coeffs, result.dense_coeffs
        report["config"] = scenario_to_json(sc)["train"]
        report["training_log"] = [
            {k: (float(v) if isinstance(v, float) else v) for k, v in entry.items()}
            for entry in result.log
        ]
        ckpt_path = out / f"{sc.name}.gru.json"
        save_checkpoint(result.gru, ckpt_path)
        report["checkpoint"] = ckpt_path.name
    report["coefficients"] = {
        "dense": [[float(v) for v in row] for row in np.atleast_2d(dense)],
        "thresholded": [[float(v) for v in row] for row in coeffs.values],
        "support": [[bool(b) for b in row] for row in coeffs.support],
    }
    report["metrics"] = _coeff_metrics(coeffs, dense, sc, lib, windows, traj.dt)
    path = out / f"{sc.name}.{args.method}.report.json"
    _write_json(path, report)
    _sidecar(path, {"command": "recover", "method": args.method})
    print(f"wrote {path}")
    print(f"coefficient MSE: {report['metrics']['coefficient_mse']:.6g}  "
          f"reconstruction MSE: {report['metrics']['reconstruction_mse']:.6g}")
    return 0


def cmd_hwreport(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline_config = args.pipeline_config
    if pipeline_config is None and args.scenario:
        pipeline_config = load_scenario(args.scenario).pipeline_config
    if pipeline_config:
        data = json.loads(Path(pipeline_config).read_text())
        configs = [hwmodel.config_from_json(c) for c in data["configs"]]
        rows = []
        ref = configs[0]
        for cfg in configs:
            row = {"config": cfg.name, "interval": hwmodel.pipeline_interval(cfg),
                   "throughput_per_s": round(hwmodel.throughput(cfg), 3),
                   "speedup_vs_first": round(hwmodel.throughput_ratio(cfg, ref), 4)}
            if cfg.power_w is not None and ref.power_w is not None:
                row["energy_vs_first"] = round(hwmodel.energy_per_output(cfg, ref), 6)
            rows.append(row)
        name = "pipeline"
    else:
        fixture = _FIXTURES[args.fixture]()
        if fixture.name == "designs":
            rows = hwmodel.design_report_rows(fixture, fmax_mhz=args.fmax)
        else:
            check = hwmodel.resource_ordering_check(fixture)
            rows = [
                {"config": r.name, "cycles": r.cycles, "lut": r.lut, "ff": r.ff,
                 "dsp": r.dsp, "bram": r.bram}
                for r in fixture.rows
            ]
            print(f"ordering checks passed: {check.passed} "
                  f"(min cycles {check.min_cycles} @ {check.min_cycles_name})")
            for note in check.anomalies:
                print(f"note: {note}")
        name = fixture.name
    csv_text = hwmodel.rows_to_csv(rows)
    path = out / f"hwreport.{name}.csv"
    path.write_text(csv_text)
    print(hwmodel.render_table(rows), end="")
    print(f"wrote {path}")
    return 0


def cmd_quantize_eval(args: argparse.Namespace) -> int:
    sc = _load_scenario_arg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint {ckpt_path} not found")
    gru = load_checkpoint(ckpt_path)
    act_fmt = sc.activation_format
    weight_fmt = sc.weight_format
    if args.formats:
        parts = [p.strip() for p in args.formats.split(",")]
        if len(parts) != 2:
            raise ValueError("--formats expects 'ACT_FMT,WEIGHT_FMT'")
        act_fmt, weight_fmt = parse_format(parts[0]), parse_format(parts[1])
    qcfg = QuantConfig(act_fmt=act_fmt, weight_fmt=weight_fmt)
    tables = (build_table("sigmoid", out_fmt=act_fmt),
              build_table("tanh", out_fmt=act_fmt))

    traj = _generate_traj(sc)
    k = sc.train.window
    if traj.n_samples < k:
        raise ValueError(
            f"scenario has {traj.n_samples} samples but the evaluation window "
            f"needs {k}")
    held_out = traj.window(traj.n_samples - k, k)
    feats = np.hstack([held_out.y, held_out.u]) if held_out.input_dim else held_out.y
    h0 = np.zeros(gru.hidden_size)
    ref, _ = seq_forward(gru, h0, feats)
    qh = quantized_forward(gru, h0, feats, qcfg, tables)
    dev = np.abs(qh - ref)
    report = {
        "checkpoint": ckpt_path.name,
        "formats": {"activation": act_fmt.descriptor(),
                    "weight": weight_fmt.descriptor(),
                    "accumulator": qcfg.acc_fmt.descriptor()},
        "window": {"start": traj.n_samples - k, "length": k},
        "deviation": {
            "max_abs": float(dev.max()),
            "mean_abs": float(dev.mean()),
            "per_step_max": [float(v) for v in dev.max(axis=1)],
        },
    }
    path = out / f"{ckpt_path.stem}.quantize.json"
    _write_json(path, report)
    _sidecar(path, {"command": "quantize-eval"})
    print(f"wrote {path}")
    print(f"max |quantized - float| = {report['deviation']['max_abs']:.6g} "
          f"({act_fmt.descriptor()} activations, {weight_fmt.descriptor()} weights)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="merinda",
        description="model recovery experiments and hardware pipeline reports")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a scenario dataset CSV")
    gen.add_argument("--scenario", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None, help="override scenario seed")
    gen.set_defaults(func=cmd_generate)

    rec = sub.add_parser("recover", help="recover sparse dynamics from a trajectory")
    rec.add_argument("--scenario", required=True)
    rec.add_argument("--method", required=True, choices=["merinda", "sindy"])
    rec.add_argument("--out", required=True)
    rec.add_argument("--trajectory", default=None,
                     help="trajectory CSV (default: <out>/<name>.csv)")
    rec.add_argument("--seed", type=int, default=None)
    rec.set_defaults(func=cmd_recover)

    hw = sub.add_parser("hwreport", help="pipeline interval/throughput/energy report")
    hw.add_argument("--fixture", default="designs", choices=sorted(_FIXTURES),
                    help="calibration fixture to report on")
    hw.add_argument("--pipeline-config", default=None,
                    help="JSON file with analytic pipeline configs")
    hw.add_argument("--scenario", default=None,
                    help="scenario whose pipeline_config field to report on")
    hw.add_argument("--fmax", type=float, default=150.0, help="clock in MHz")
    hw.add_argument("--out", required=True)
    hw.set_defaults(func=cmd_hwreport)

    qe = sub.add_parser("quantize-eval",
                        help="float vs fixed-point GRU deviation report")
    qe.add_argument("--checkpoint", required=True)
    qe.add_argument("--scenario", required=True)
    qe.add_argument("--out", required=True)
    qe.add_argument("--formats", default=None, help="'ACT_FMT,WEIGHT_FMT' override")
    qe.add_argument("--seed", type=int, default=None)
    qe.set_defaults(func=cmd_quantize_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
