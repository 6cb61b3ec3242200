"""Analytic model of the four-stage dataflow pipeline on FPGA.

The pipeline splits a GRU step into gate affines (s1), sigmoid lookup
(s2), candidate computation (s3) and state interpolation (s4); each stage
binds to DSP MACs ("D") or LUT/carry-chain logic ("L").  Throughput is
governed by the steady-state initiation interval: a stage needing R array
reads per iteration against B true-dual-port banks can launch at best
every ceil(R / 2B) cycles, so the pipeline interval is the max stage II
plus any arbitration overhead, and

    throughput = Fmax / interval,      energy per output ~ power * interval.

A greedy cycle-level port scheduler acts as the oracle for the analytic
lower bound: it can only do worse under bank conflicts and matches the
bound exactly for conflict-free cyclic layouts.

Absolute cycle counts and LUT/FF/DSP totals are synthesis outputs, not
modelled here; they are carried as read-only calibration fixtures and
checked for qualitative structure only (constant BRAM, per-stage DSP flip
direction, location of the cycle minimum).
"""

from __future__ import annotations

import io
import json
from collections import defaultdict
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "StageSpec",
    "BankConfig",
    "PipelineConfig",
    "FixtureRow",
    "CalibrationFixture",
    "FixtureIntegrityError",
    "OrderingReport",
    "MappingTemplate",
    "stage_ii",
    "simulate_bank_ports",
    "pipeline_interval",
    "throughput",
    "throughput_ratio",
    "energy_per_output",
    "enumerate_mappings",
    "format_mapping_name",
    "parse_mapping_name",
    "resource_ordering_check",
    "mapping_fixture",
    "design_fixture",
    "fixture_to_json",
    "fixture_from_json",
    "design_report_rows",
    "render_table",
    "rows_to_csv",
]

STAGE_IDS = ("s1", "s2", "s3", "s4")
BINDINGS = ("D", "L")

# Stages whose D binding hosts the heavy MAC datapath; moving them to LUT
# frees DSPs.  The sigmoid stage (s2) shows the opposite flip direction in
# the calibration data and is checked for consistency, not decrease.
MAC_STAGES = ("s1", "s3", "s4")


class FixtureIntegrityError(ValueError):
    """Calibration fixture does not have the expected structure."""


@dataclass(frozen=True)
class StageSpec:
    stage_id: str
    binding: str = "D"
    reads_per_iter: int = 1
    unroll: int = 1
    base_latency: int = 1

    def __post_init__(self) -> None:
        if self.stage_id not in STAGE_IDS:
            raise ValueError(f"stage_id must be one of {STAGE_IDS}")
        if self.binding not in BINDINGS:
            raise ValueError("binding must be 'D' or 'L'")
        if self.reads_per_iter < 0 or self.unroll < 1 or self.base_latency < 0:
            raise ValueError("invalid stage parameters")

    @property
    def effective_reads(self) -> int:
        return self.reads_per_iter * self.unroll


@dataclass(frozen=True)
class BankConfig:
    banks: int = 1
    ports_per_bank: int = 2   # true dual-port block RAM
    layout: str = "cyclic"

    def __post_init__(self) -> None:
        if self.banks < 1 or self.ports_per_bank < 1:
            raise ValueError("banks and ports_per_bank must be positive")
        if self.layout not in ("cyclic", "direct"):
            raise ValueError("layout must be 'cyclic' or 'direct'")


@dataclass(frozen=True)
class PipelineConfig:
    name: str
    stages: tuple[StageSpec, ...]
    banks: Mapping[str, BankConfig]
    fmax_mhz: float = 150.0
    power_w: float | None = None
    arbitration_overhead: int = 0
    interval_override: int | None = None   # measured interval for fixture configs

    def __post_init__(self) -> None:
        if len(self.stages) != 4 or tuple(s.stage_id for s in self.stages) != STAGE_IDS:
            raise ValueError("a pipeline needs exactly stages s1..s4 in order")
        if self.fmax_mhz <= 0:
            raise ValueError("fmax must be positive")
        object.__setattr__(self, "banks", dict(self.banks))

    def bank_config(self, stage_id: str) -> BankConfig:
        return self.banks.get(stage_id, BankConfig())


def stage_ii(reads: int, banks: int) -> int:
    """Banking law: II >= ceil(R / 2B); a stage always needs one cycle."""
    if reads < 0:
        raise ValueError("reads must be >= 0")
    if banks < 1:
        raise ValueError("banks must be >= 1")
    if reads == 0:
        return 1
    return max(1, -(-reads // (2 * banks)))


def simulate_bank_ports(trace: Sequence[Sequence[int]], banks: int,
                        layout: str = "cyclic", ports_per_bank: int = 2) -> int:
    """Greedy cycle-level port scheduler; returns the achieved steady-state II.

    trace holds one list of array addresses per loop iteration; a cyclic
    layout maps address a to bank a % banks ('direct' treats entries as
    bank ids).  Iterations launch in order, at most one per cycle, and
    each read takes the earliest cycle with a free port on its bank.  The
    achieved II is the ceiling of the mean spacing between iteration
    completions over the steady-state tail.
    """
    if not trace:
        raise ValueError("trace must not be empty")
    if layout not in ("cyclic", "direct"):
        raise ValueError("layout must be 'cyclic' or 'direct'")
    usage: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    first = -1
    completions: list[int] = []
    for reads in trace:
        t0 = first + 1
        if not len(reads):
            first = t0
            completions.append(t0)
            continue
        assigned = []
        for addr in reads:
            if layout == "cyclic":
                bank = addr % banks
            else:
                bank = addr
                if not 0 <= bank < banks:
                    raise ValueError(f"bank id {bank} outside 0..{banks - 1}")
            t = t0
            while usage[t][bank] >= ports_per_bank:
                t += 1
            usage[t][bank] += 1
            assigned.append(t)
        first = min(assigned)
        completions.append(max(assigned))
    if len(completions) < 2:
        return 1
    mid = len(completions) // 2
    span = completions[-1] - completions[mid]
    iters = len(completions) - 1 - mid
    return max(1, -(-span // iters))


def pipeline_interval(cfg: PipelineConfig) -> int:
    """Steady-state output spacing: max stage II plus arbitration overhead."""
    if cfg.interval_override is not None:
        return cfg.interval_override
    worst = max(stage_ii(s.effective_reads, cfg.bank_config(s.stage_id).banks)
                for s in cfg.stages)
    return worst + cfg.arbitration_overhead


def throughput(cfg: PipelineConfig) -> float:
    """Outputs per second at the configured clock."""
    return cfg.fmax_mhz * 1e6 / pipeline_interval(cfg)


def throughput_ratio(cfg: PipelineConfig, reference: PipelineConfig) -> float:
    return throughput(cfg) / throughput(reference)


def energy_per_output(cfg: PipelineConfig, reference: PipelineConfig) -> float:
    """(P * interval) / (P_ref * interval_ref), assuming comparable Fmax."""
    if cfg.power_w is None or reference.power_w is None:
        raise ValueError("both configs need a measured power to compare energy")
    return (cfg.power_w * pipeline_interval(cfg)) / (
        reference.power_w * pipeline_interval(reference))


# ---------------------------------------------------------------------------
# Stage-binding enumeration
# ---------------------------------------------------------------------------

def format_mapping_name(bindings: Mapping[str, str]) -> str:
    return "_".join(f"{sid}{bindings[sid]}" for sid in STAGE_IDS)


def parse_mapping_name(name: str) -> dict[str, str]:
    parts = name.split("_")
    if len(parts) != 4:
        raise ValueError(f"bad mapping name {name!r}")
    out: dict[str, str] = {}
    for sid, part in zip(STAGE_IDS, parts):
        if not part.startswith(sid) or part[len(sid):] not in BINDINGS:
            raise ValueError(f"bad mapping name {name!r}")
        out[sid] = part[len(sid):]
    return out


@dataclass(frozen=True)
class MappingTemplate:
    """Per-stage structure shared by all enumerated binding assignments."""

    reads_per_iter: Mapping[str, int]
    unroll: Mapping[str, int]
    banks: Mapping[str, BankConfig]
    fmax_mhz: float = 150.0
    power_w: float | None = None


def default_mapping_template() -> MappingTemplate:
    # Gate affines fetch one weight per unrolled lane; unroll 4 per stage 1
    # and the candidate stage, single-read elementwise stages otherwise.
    return MappingTemplate(
        reads_per_iter={"s1": 1, "s2": 1, "s3": 1, "s4": 1},
        unroll={"s1": 4, "s2": 1, "s3": 4, "s4": 1},
        banks={"s1": BankConfig(banks=2), "s3": BankConfig(banks=2)},
    )


def enumerate_mappings(template: MappingTemplate | None = None) -> list[PipelineConfig]:
    """All 16 D/L binding assignments, named s1D_s2D_s3D_s4D .. s1L_s2L_s3L_s4L."""
    template = template or default_mapping_template()
    configs = []
    for combo in product(BINDINGS, repeat=4):
        bindings = dict(zip(STAGE_IDS, combo))
        stages = tuple(
            StageSpec(stage_id=sid, binding=bindings[sid],
                      reads_per_iter=template.reads_per_iter.get(sid, 1),
                      unroll=template.unroll.get(sid, 1))
            for sid in STAGE_IDS)
        configs.append(PipelineConfig(
            name=format_mapping_name(bindings),
            stages=stages,
            banks=dict(template.banks),
            fmax_mhz=template.fmax_mhz,
            power_w=template.power_w,
        ))
    return configs


# ---------------------------------------------------------------------------
# Calibration fixtures: measured synthesis results (external inputs to this
# model).  Checked for orderings only, never predicted.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixtureRow:
    name: str
    cycles: int
    lut: int
    ff: int
    dsp: int
    bram: int
    interval: int | None = None
    power_w: float | None = None


@dataclass(frozen=True)
class CalibrationFixture:
    name: str
    provenance: str
    rows: tuple[FixtureRow, ...]

    def row(self, name: str) -> FixtureRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def names(self) -> list[str]:
        return [r.name for r in self.rows]


_MAPPING_ROWS = (
    ("s1D_s2D_s3D_s4D", 390, 17415, 16190, 185, 10),
    ("s1D_s2D_s3D_s4L", 389, 17355, 16140, 184, 10),
    ("s1D_s2D_s3L_s4D", 388, 20020, 17025, 163, 10),
    ("s1D_s2D_s3L_s4L", 387, 19963, 16977, 162, 10),
    ("s1D_s2L_s3D_s4D", 393, 16970, 16400, 191, 10),
    ("s1D_s2L_s3D_s4L", 392, 16908, 16351, 190, 10),
    ("s1D_s2L_s3L_s4D", 380, 19480, 17150, 168, 10),
    ("s1D_s2L_s3L_s4L", 390, 19563, 17209, 168, 10),
    ("s1L_s2D_s3D_s4D", 392, 31620, 23075, 61, 10),
    ("s1L_s2D_s3D_s4L", 391, 31563, 23011, 60, 10),
    ("s1L_s2D_s3L_s4D", 390, 34225, 23895, 39, 10),
    ("s1L_s2D_s3L_s4L", 389, 34171, 23848, 38, 10),
    ("s1L_s2L_s3D_s4D", 388, 31170, 23280, 67, 10),
    ("s1L_s2L_s3D_s4L", 387, 31116, 23222, 66, 10),
    ("s1L_s2L_s3L_s4D", 386, 33820, 24110, 45, 10),
    ("s1L_s2L_s3L_s4L", 392, 33771, 24080, 44, 10),
)

_DESIGN_ROWS = (
    # name, cycles, lut, ff, dsp, bram, interval, power_w
    ("LTC", 1201, 27368, 39281, 49, 5, 12014, 5.11),
    ("GRU Baseline", 1045, 10458, 15538, 44, 7, 271, 4.736),
    ("Concurrent GRU", 380, 19480, 17150, 168, 10, 145, 3.013),
    ("BRAM optimal GRU", 190, 276047, 130106, 524, 18, 107, 4.15),
)

_PROVENANCE = ("measured on-board synthesis results; loaded as read-only "
               "calibration data, not derivable from this model")


def mapping_fixture() -> CalibrationFixture:
    """Stage-binding sweep measurements (16 D/L combinations)."""
    return CalibrationFixture(
        name="stage_mappings",
        provenance=_PROVENANCE,
        rows=tuple(FixtureRow(*r) for r in _MAPPING_ROWS),
    )


def design_fixture() -> CalibrationFixture:
    """Four accelerator designs with measured intervals and power."""
    return CalibrationFixture(
        name="designs",
        provenance=_PROVENANCE,
        rows=tuple(FixtureRow(*r) for r in _DESIGN_ROWS),
    )


def fixture_config(row: FixtureRow, fmax_mhz: float = 150.0) -> PipelineConfig:
    """Wrap a measured fixture row as a pipeline config (interval override)."""
    if row.interval is None:
        raise ValueError(f"fixture row {row.name!r} has no measured interval")
    stages = tuple(StageSpec(stage_id=sid) for sid in STAGE_IDS)
    return PipelineConfig(name=row.name, stages=stages, banks={},
                          fmax_mhz=fmax_mhz, power_w=row.power_w,
                          interval_override=row.interval)


# ---------------------------------------------------------------------------
# Fixture ordering checks
# ---------------------------------------------------------------------------

@dataclass
class OrderingReport:
    bram_constant: bool
    bram_value: int
    min_cycles_name: str
    min_cycles: int
    flip_deltas: dict[str, tuple[int, ...]]       # dsp deltas per D->L flip
    flip_consistent: dict[str, bool]              # all deltas share one sign
    mac_stage_flips_non_increasing: bool          # s1/s3/s4 never gain DSPs
    anomalies: list[str]

    @property
    def passed(self) -> bool:
        return (self.bram_constant and self.mac_stage_flips_non_increasing
                and all(self.flip_consistent.values()))


def resource_ordering_check(fixture: CalibrationFixture) -> OrderingReport:
    """Verify the qualitative structure of the stage-mapping fixture.

    Checks: BRAM is constant across all rows; per stage, flipping that
    stage D->L moves the DSP count in one consistent direction, with the
    MAC-bearing stages (s1, s3, s4) never increasing it; and locates the
    cycle minimum.  The sigmoid stage's flips are direction-checked only:
    the measured data has them consistently *adding* a few DSPs, which is
    reported as an anomaly rather than hidden.
    """
    rows = {r.name: r for r in fixture.rows}
    expected = {format_mapping_name(dict(zip(STAGE_IDS, combo)))
                for combo in product(BINDINGS, repeat=4)}
    if set(rows) != expected:
        raise FixtureIntegrityError(
            f"fixture must hold exactly the 16 binding combinations, got {sorted(rows)}")

    brams = {r.bram for r in fixture.rows}
    bram_constant = len(brams) == 1
    min_row = min(fixture.rows, key=lambda r: r.cycles)

    flip_deltas: dict[str, tuple[int, ...]] = {}
    flip_consistent: dict[str, bool] = {}
    anomalies: list[str] = []
    for sid in STAGE_IDS:
        deltas = []
        for name, row in rows.items():
            bindings = parse_mapping_name(name)
            if bindings[sid] != "D":
                continue
            flipped = dict(bindings)
            flipped[sid] = "L"
            deltas.append(rows[format_mapping_name(flipped)].dsp - row.dsp)
        flip_deltas[sid] = tuple(deltas)
        flip_consistent[sid] = all(d <= 0 for d in deltas) or all(d >= 0 for d in deltas)
        if deltas and min(deltas) > 0:
            anomalies.append(
                f"{sid}: D->L consistently increases DSP use "
                f"(by {min(deltas)}..{max(deltas)})")
    mac_ok = all(all(d <= 0 for d in flip_deltas[sid]) for sid in MAC_STAGES)
    return OrderingReport(
        bram_constant=bram_constant,
        bram_value=fixture.rows[0].bram,
        min_cycles_name=min_row.name,
        min_cycles=min_row.cycles,
        flip_deltas=flip_deltas,
        flip_consistent=flip_consistent,
        mac_stage_flips_non_increasing=mac_ok,
        anomalies=anomalies,
    )


# ---------------------------------------------------------------------------
# Serialization and reporting
# ---------------------------------------------------------------------------

def config_to_json(cfg: PipelineConfig) -> dict:
    data: dict = {
        "name": cfg.name,
        "stages": {
            s.stage_id: {"binding": s.binding, "reads_per_iter": s.reads_per_iter,
                         "unroll": s.unroll}
            for s in cfg.stages
        },
        "banks": {sid: bc.banks for sid, bc in cfg.banks.items()},
        "fmax_mhz": cfg.fmax_mhz,
        "arbitration_overhead": cfg.arbitration_overhead,
    }
    if cfg.power_w is not None:
        data["power_w"] = cfg.power_w
    if cfg.interval_override is not None:
        data["interval"] = cfg.interval_override
    return data


def config_from_json(data: Mapping) -> PipelineConfig:
    stages = tuple(
        StageSpec(stage_id=sid,
                  binding=data.get("stages", {}).get(sid, {}).get("binding", "D"),
                  reads_per_iter=int(data.get("stages", {}).get(sid, {})
                                     .get("reads_per_iter", 1)),
                  unroll=int(data.get("stages", {}).get(sid, {}).get("unroll", 1)))
        for sid in STAGE_IDS)
    banks = {sid: BankConfig(banks=int(b))
             for sid, b in data.get("banks", {}).items()}
    return PipelineConfig(
        name=data["name"],
        stages=stages,
        banks=banks,
        fmax_mhz=float(data.get("fmax_mhz", 150.0)),
        power_w=float(data["power_w"]) if "power_w" in data else None,
        arbitration_overhead=int(data.get("arbitration_overhead", 0)),
        interval_override=int(data["interval"]) if "interval" in data else None,
    )


def fixture_to_json(fixture: CalibrationFixture) -> dict:
    return {
        "name": fixture.name,
        "provenance": fixture.provenance,
        "rows": [
            {k: v for k, v in row.__dict__.items() if v is not None}
            for row in fixture.rows
        ],
    }


def fixture_from_json(data: dict) -> CalibrationFixture:
    rows = tuple(
        FixtureRow(
            name=r["name"], cycles=int(r["cycles"]), lut=int(r["lut"]),
            ff=int(r["ff"]), dsp=int(r["dsp"]), bram=int(r["bram"]),
            interval=int(r["interval"]) if "interval" in r else None,
            power_w=float(r["power_w"]) if "power_w" in r else None,
        )
        for r in data["rows"])
    return CalibrationFixture(name=data["name"], provenance=data["provenance"],
                              rows=rows)


def save_fixture(fixture: CalibrationFixture, path: str | Path) -> None:
    Path(path).write_text(json.dumps(fixture_to_json(fixture), indent=2,
                                     sort_keys=True) + "\n")


def load_fixture(path: str | Path) -> CalibrationFixture:
    return fixture_from_json(json.loads(Path(path).read_text()))


def design_report_rows(fixture: CalibrationFixture,
                       fmax_mhz: float = 150.0) -> list[dict]:
    """Interval/throughput/energy table with the first row as reference."""
    configs = [fixture_config(r, fmax_mhz) for r in fixture.rows]
    ref = configs[0]
    rows = []
    for i, (cfg, frow) in enumerate(zip(configs, fixture.rows)):
        prev = configs[i - 1] if i else cfg
        rows.append({
            "config": cfg.name,
            "cycles": frow.cycles,
            "interval": pipeline_interval(cfg),
            "power_w": cfg.power_w,
            "speedup_vs_prev": round(throughput_ratio(cfg, prev), 4),
            "throughput_x_vs_" + ref.name.replace(" ", "_"):
                round(throughput_ratio(cfg, ref), 4),
            "energy_vs_" + ref.name.replace(" ", "_"):
                round(energy_per_output(cfg, ref), 6),
        })
    return rows


def rows_to_csv(rows: Iterable[Mapping[str, object]]) -> str:
    rows = list(rows)
    if not rows:
        return ""
    cols = list(rows[0].keys())
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in rows:
        buf.write(",".join(str(row[c]) for c in cols) + "\n")
    return buf.getvalue()


def render_table(rows: Iterable[Mapping[str, object]]) -> str:
    rows = list(rows)
    if not rows:
        return "(empty)\n"
    cols = list(rows[0].keys())
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    lines.append("  ".join("-" * widths[c] for c in cols))
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    return "\n".join(lines) + "\n"
