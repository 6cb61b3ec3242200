"""Experiment scenario files and deterministic seed streams.

A scenario JSON pins everything a run needs: the system and its ground
truth, sampling, noise, library order, training hyperparameters and
datapath formats.  All randomness in a run derives from the single
scenario seed through counter-based (Philox) streams with fixed stream
ids, so subsystems cannot perturb each other's draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import SYSTEMS
from .fxp import FxFormat, parse_format
from .recovery.library import TermLibrary
from .recovery.train import TrainConfig

__all__ = [
    "Scenario",
    "load_scenario",
    "save_scenario",
    "default_lv_scenario",
    "rng_stream",
    "true_library_coeffs",
]

_STREAMS = {"noise": 0, "train": 1, "quantize": 2}


def rng_stream(seed: int, stream: str) -> np.random.Generator:
    """Independent counter-based generator for a named subsystem stream."""
    if stream not in _STREAMS:
        raise ValueError(f"unknown stream {stream!r}; known: {sorted(_STREAMS)}")
    seq = np.random.SeedSequence(seed, spawn_key=(_STREAMS[stream],))
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class Scenario:
    name: str
    system: str
    theta_true: np.ndarray
    x0: np.ndarray
    dt: float
    n_samples: int
    noise_std: float
    seed: int
    max_order: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    activation_format: FxFormat = field(default_factory=lambda: parse_format("Q2.6/8"))
    weight_format: FxFormat = field(default_factory=lambda: parse_format("Q2.14/16"))
    sindy_ridge_lambda: float = 1e-6
    sindy_threshold: float = 0.05
    sindy_iters: int = 10
    pipeline_config: Path | None = None   # optional hwmodel config file

    def validate(self) -> None:
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}; known: {sorted(SYSTEMS)}")
        if self.dt <= 0 or self.n_samples < 2 or self.noise_std < 0:
            raise ValueError("dt > 0, n_samples >= 2, noise_std >= 0 required")
        sys = SYSTEMS[self.system]()
        if np.asarray(self.x0).shape != (sys.n,):
            raise ValueError(f"x0 must have length {sys.n}")
        if self.pipeline_config is not None and not Path(self.pipeline_config).exists():
            raise FileNotFoundError(
                f"pipeline config {self.pipeline_config} does not exist")
        self.train.validate()


def load_scenario(path: str | Path) -> Scenario:
    data = json.loads(Path(path).read_text())
    missing = {"name", "system", "theta_true", "x0", "dt", "n_samples",
               "noise_std", "seed"} - set(data)
    if missing:
        raise ValueError(f"scenario is missing fields: {sorted(missing)}")
    train_data = dict(data.get("train", {}))
    train_data.pop("seed", None)  # the scenario seed is authoritative
    train = TrainConfig(seed=int(data["seed"]), **train_data)
    fmts = data.get("formats", {})
    sc = Scenario(
        name=data["name"],
        system=data["system"],
        theta_true=np.asarray(data["theta_true"], dtype=np.float64),
        x0=np.asarray(data["x0"], dtype=np.float64),
        dt=float(data["dt"]),
        n_samples=int(data["n_samples"]),
        noise_std=float(data["noise_std"]),
        seed=int(data["seed"]),
        max_order=int(data.get("library", {}).get("max_order", 2)),
        train=train,
        activation_format=parse_format(fmts.get("activation", "Q2.6/8")),
        weight_format=parse_format(fmts.get("weight", "Q2.14/16")),
        sindy_ridge_lambda=float(data.get("sindy", {}).get("ridge_lambda", 1e-6)),
        sindy_threshold=float(data.get("sindy", {}).get("threshold", 0.05)),
        sindy_iters=int(data.get("sindy", {}).get("iters", 10)),
    )
    if data.get("pipeline_config"):
        # paths resolve relative to the scenario file
        sc.pipeline_config = (Path(path).parent / data["pipeline_config"]).resolve()
    sc.validate()
    return sc


def scenario_to_json(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "system": sc.system,
        "theta_true": [float(v) for v in sc.theta_true],
        "x0": [float(v) for v in sc.x0],
        "dt": sc.dt,
        "n_samples": sc.n_samples,
        "noise_std": sc.noise_std,
        "seed": sc.seed,
        "library": {"max_order": sc.max_order},
        "train": {
            "window": sc.train.window,
            "batch_size": sc.train.batch_size,
            "epochs": sc.train.epochs,
            "learning_rate": sc.train.learning_rate,
            "threshold": sc.train.threshold,
            "l1_weight": sc.train.l1_weight,
            "hidden_size": sc.train.hidden_size,
        },
        "formats": {
            "activation": sc.activation_format.descriptor(),
            "weight": sc.weight_format.descriptor(),
        },
        "sindy": {
            "ridge_lambda": sc.sindy_ridge_lambda,
            "threshold": sc.sindy_threshold,
            "iters": sc.sindy_iters,
        },
        **({"pipeline_config": str(sc.pipeline_config)}
           if sc.pipeline_config is not None else {}),
    }


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(sc), indent=2, sort_keys=True) + "\n")


def default_lv_scenario(seed: int = 1234) -> Scenario:
    return Scenario(
        name="lotka_volterra_clean",
        system="lotka_volterra",
        theta_true=np.array([1.0, 0.5, 0.3, 1.0]),
        x0=np.array([1.0, 2.0]),
        dt=0.01,
        n_samples=2000,
        noise_std=0.0,
        seed=seed,
        train=TrainConfig(seed=seed),
    )


def true_library_coeffs(system: str, theta: np.ndarray, lib: TermLibrary) -> np.ndarray:
    """Ground-truth coefficient matrix of a built-in system in library order."""
    theta = np.asarray(theta, dtype=np.float64)
    idx = {e: i for i, e in enumerate(lib.terms)}

    def e(*exps: int) -> int:
        return idx[tuple(exps)]

    a = np.zeros((lib.n, lib.size))
    if system == "lotka_volterra":
        ca, cb, cc, cd = theta
        a[0, e(1, 0)] = ca
        a[0, e(1, 1)] = -cb
        a[1, e(0, 1)] = -cd
        a[1, e(1, 1)] = cc
    elif system == "lorenz63":
        sigma, rho, beta = theta
        a[0, e(1, 0, 0)] = -sigma
        a[0, e(0, 1, 0)] = sigma
        a[1, e(1, 0, 0)] = rho
        a[1, e(0, 1, 0)] = -1.0
        a[1, e(1, 0, 1)] = -1.0
        a[2, e(1, 1, 0)] = 1.0
        a[2, e(0, 0, 1)] = -beta
    else:
        raise ValueError(f"no library ground truth for system {system!r}")
    return a
