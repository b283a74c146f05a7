"""Hardware performance-counter ingestion.

Vendor CSV dialects drift between profiler versions, so each adapter
normalizes into one canonical record, :class:`CounterDump`, and everything
downstream consumes only that. The per-SM metrics (warp-instruction counts,
active cycles, achieved occupancy) come from NVProf-style exports; the
thread-level atomic-operation total comes from NCU-style exports, which
only aggregate across SMs. ``merge`` combines the two sides of one kernel
launch.

Canonical dump JSON::

    {
      "kernel_name": "hist",
      "gpu": {"name": "titan-v", "warps_per_sm": 64, "sm_count": 80},
      "total_atomic_ops": 4096,          // or null when NCU data is absent
      "per_sm": [
        {"sm": 0, "fao": 10, "cas": 0, "active_cycles": 1000,
         "achieved_occupancy": 0.25},
        ...
      ]
    }

Unknown fields are ignored. All parsers are pure functions of the file
contents and raise only package error types.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import (
    KernelMismatchError,
    MetricConflictError,
    MissingMetricError,
    ParseError,
)
from .tables import GpuSpec

# Table-1 per-SM metrics and the aggregate NCU metric. NVProf columns are
# matched by suffix because real exports prefix metric names with device
# identifiers; the NCU metric is matched on its stable substring plus the
# ".sum" aggregation suffix.
NVPROF_METRICS = (
    "shared_atom",
    "shared_atom_cas",
    "active_cycles",
    "achieved_occupancy",
)
NCU_ATOMIC_SUBSTRING = "mem_shared_op_atom"
NCU_SUM_SUFFIX = ".sum"


@dataclass(frozen=True)
class SmCounters:
    """Basic per-SM operational quantities for one kernel launch."""

    sm_index: int
    fao_warp_instructions: int
    cas_warp_instructions: int
    active_cycles: int
    achieved_occupancy: float

    def __post_init__(self):
        if self.sm_index < 0:
            raise ParseError(f"sm index must be >= 0, got {self.sm_index}")
        if self.fao_warp_instructions < 0 or self.cas_warp_instructions < 0:
            raise ParseError(
                f"sm {self.sm_index}: warp-instruction counts must be >= 0"
            )
        if self.active_cycles < 1:
            raise ParseError(
                f"sm {self.sm_index}: active_cycles must be a positive integer, "
                f"got {self.active_cycles}"
            )
        if not 0.0 <= self.achieved_occupancy <= 1.0:
            raise ParseError(
                f"sm {self.sm_index}: achieved_occupancy must be within [0,1], "
                f"got {self.achieved_occupancy}"
            )

    @property
    def total_jobs(self) -> int:
        return self.fao_warp_instructions + self.cas_warp_instructions


@dataclass(frozen=True)
class CounterDump:
    """Normalized counters for one kernel launch.

    ``total_atomic_ops`` is the thread-level operation count aggregated over
    all SMs; it is None when no NCU data was supplied.
    """

    kernel_name: str
    gpu: GpuSpec
    total_atomic_ops: int | None
    per_sm: tuple[SmCounters, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_sm", tuple(self.per_sm))
        if self.total_atomic_ops is not None and self.total_atomic_ops < 0:
            raise ParseError(
                f"total_atomic_ops must be >= 0, got {self.total_atomic_ops}"
            )
        seen: set[int] = set()
        for sm in self.per_sm:
            if sm.sm_index in seen:
                raise ParseError(f"duplicate SM index {sm.sm_index}")
            if sm.sm_index >= self.gpu.sm_count:
                raise ParseError(
                    f"sm index {sm.sm_index} out of range for "
                    f"{self.gpu.name} ({self.gpu.sm_count} SMs)"
                )
            seen.add(sm.sm_index)

    @property
    def total_warp_instructions(self) -> int:
        return sum(sm.total_jobs for sm in self.per_sm)


@dataclass(frozen=True)
class AggregateCounters:
    """Across-SM aggregate from an NCU-style export."""

    total_atomic_ops: int
    kernel_name: str | None = None


# --- canonical JSON -------------------------------------------------------------


def _expect(obj, key, kinds, path):
    if key not in obj:
        raise ParseError(f"{path}.{key}: missing required field")
    value = obj[key]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ParseError(f"{path}.{key}: expected {kinds}, got {type(value).__name__}")
    return value


def parse_canonical(path: str | Path) -> CounterDump:
    """Parse a canonical dump JSON file."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8 text: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("dump: top level must be a JSON object")
    return dump_from_dict(data)


def dump_from_dict(data: dict) -> CounterDump:
    kernel_name = _expect(data, "kernel_name", str, "dump")
    gpu_obj = _expect(data, "gpu", dict, "dump")
    try:
        gpu = GpuSpec(
            name=_expect(gpu_obj, "name", str, "dump.gpu"),
            warps_per_sm=_expect(gpu_obj, "warps_per_sm", int, "dump.gpu"),
            sm_count=_expect(gpu_obj, "sm_count", int, "dump.gpu"),
        )
    except ParseError:
        raise
    except Exception as exc:
        raise ParseError(f"dump.gpu: {exc}") from exc

    if "total_atomic_ops" not in data:
        raise ParseError("dump.total_atomic_ops: missing required field")
    total_ops = data["total_atomic_ops"]
    if total_ops is not None and (isinstance(total_ops, bool) or not isinstance(total_ops, int)):
        raise ParseError("dump.total_atomic_ops: expected integer or null")

    rows = _expect(data, "per_sm", list, "dump")
    per_sm = []
    for k, row in enumerate(rows):
        where = f"dump.per_sm[{k}]"
        if not isinstance(row, dict):
            raise ParseError(f"{where}: expected object")
        occ = _expect(row, "achieved_occupancy", (int, float), where)
        if not 0.0 <= occ <= 1.0:
            raise ParseError(f"{where}.achieved_occupancy: must be within [0,1], got {occ}")
        try:
            per_sm.append(
                SmCounters(
                    sm_index=_expect(row, "sm", int, where),
                    fao_warp_instructions=_expect(row, "fao", int, where),
                    cas_warp_instructions=_expect(row, "cas", int, where),
                    active_cycles=_expect(row, "active_cycles", int, where),
                    achieved_occupancy=float(occ),
                )
            )
        except ParseError as exc:
            raise ParseError(f"{where}: {exc}") from exc
    return CounterDump(
        kernel_name=kernel_name, gpu=gpu, total_atomic_ops=total_ops, per_sm=tuple(per_sm)
    )


def dump_to_dict(dump: CounterDump) -> dict:
    return {
        "kernel_name": dump.kernel_name,
        "gpu": {
            "name": dump.gpu.name,
            "warps_per_sm": dump.gpu.warps_per_sm,
            "sm_count": dump.gpu.sm_count,
        },
        "total_atomic_ops": dump.total_atomic_ops,
        "per_sm": [
            {
                "sm": sm.sm_index,
                "fao": sm.fao_warp_instructions,
                "cas": sm.cas_warp_instructions,
                "active_cycles": sm.active_cycles,
                "achieved_occupancy": sm.achieved_occupancy,
            }
            for sm in dump.per_sm
        ],
    }


def write_canonical(dump: CounterDump, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(dump_to_dict(dump), indent=2) + "\n", encoding="utf-8"
    )


# --- NVProf-style per-SM CSV -----------------------------------------------------

_SM_COLUMNS = ("sm", "sm_id", "sm_index", "sm index")
_METRIC_COLUMNS = ("metric", "metric name", "metric_name")
_VALUE_COLUMNS = ("value", "metric value", "metric_value", "avg")
_KERNEL_COLUMNS = ("kernel", "kernel name", "kernel_name")


def _read_csv_rows(path: str | Path) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8 text: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("==")]
    try:
        rows = list(csv.reader(lines))
    except csv.Error as exc:
        raise ParseError(f"{path}: malformed CSV: {exc}") from exc
    return [[cell.strip() for cell in row] for row in rows if row]


def _find_column(header: list[str], names: tuple[str, ...]) -> int | None:
    lowered = [h.lower() for h in header]
    for name in names:
        if name in lowered:
            return lowered.index(name)
    return None


def _match_metric(name: str) -> str | None:
    """Map a possibly device-prefixed column/metric name to a Table-1 metric."""
    lowered = name.lower()
    for metric in NVPROF_METRICS:
        if lowered == metric or lowered.endswith("_" + metric) or lowered.endswith("." + metric):
            return metric
    return None


def _numeric(cell: str, where: str) -> float:
    try:
        return float(cell.replace(",", ""))
    except ValueError as exc:
        raise ParseError(f"{where}: malformed numeric cell {cell!r}") from exc


def _int_metric(value: float, where: str) -> int:
    if value < 0 or value != int(value):
        raise ParseError(f"{where}: expected a non-negative integer, got {value}")
    return int(value)


def parse_nvprof_csv(
    path: str | Path, gpu: GpuSpec, kernel_name: str | None = None
) -> CounterDump:
    """Parse an NVProf-style per-SM metric CSV.

    Accepts either one row per (SM, metric) with metric/value columns, or
    wide rows with one column per metric. The returned dump has
    ``total_atomic_ops`` unset; merge it with NCU data to complete it.
    """
    rows = _read_csv_rows(path)
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    sm_col = _find_column(header, _SM_COLUMNS)
    if sm_col is None:
        raise ParseError(f"{path}: no SM index column (expected one of {_SM_COLUMNS})")
    metric_col = _find_column(header, _METRIC_COLUMNS)
    kernel_col = _find_column(header, _KERNEL_COLUMNS)

    # per_sm[sm][metric] = value
    values: dict[int, dict[str, float]] = {}
    file_kernel: str | None = None

    def note_kernel(cell: str):
        nonlocal file_kernel
        if file_kernel is None:
            file_kernel = cell

    if metric_col is not None:
        value_col = _find_column(header, _VALUE_COLUMNS)
        if value_col is None:
            raise ParseError(f"{path}: metric rows need a value column")
        for k, row in enumerate(rows[1:], start=2):
            if len(row) <= max(sm_col, metric_col, value_col):
                raise ParseError(f"{path} line {k}: too few columns")
            metric = _match_metric(row[metric_col])
            if metric is None:
                continue
            sm = _int_metric(_numeric(row[sm_col], f"{path} line {k}"), f"{path} line {k}")
            per = values.setdefault(sm, {})
            if metric in per:
                raise ParseError(f"{path} line {k}: duplicate metric {metric} for SM {sm}")
            per[metric] = _numeric(row[value_col], f"{path} line {k}")
            if kernel_col is not None and len(row) > kernel_col:
                note_kernel(row[kernel_col])
    else:
        metric_cols = {}
        for idx, name in enumerate(header):
            metric = _match_metric(name)
            if metric is not None:
                if metric in metric_cols:
                    raise ParseError(f"{path}: duplicate column for metric {metric}")
                metric_cols[metric] = idx
        for metric in NVPROF_METRICS:
            if metric not in metric_cols:
                raise MissingMetricError(metric)
        for k, row in enumerate(rows[1:], start=2):
            if len(row) <= max(sm_col, *metric_cols.values()):
                raise ParseError(f"{path} line {k}: too few columns")
            sm = _int_metric(_numeric(row[sm_col], f"{path} line {k}"), f"{path} line {k}")
            if sm in values:
                raise ParseError(f"{path} line {k}: duplicate row for SM {sm}")
            values[sm] = {
                m: _numeric(row[i], f"{path} line {k}") for m, i in metric_cols.items()
            }
            if kernel_col is not None and len(row) > kernel_col:
                note_kernel(row[kernel_col])

    if not values:
        raise ParseError(f"{path}: no per-SM metric rows found")
    for metric in NVPROF_METRICS:
        if any(metric not in per for per in values.values()):
            raise MissingMetricError(metric)

    per_sm = []
    for sm in sorted(values):
        per = values[sm]
        where = f"{path} sm {sm}"
        occ = per["achieved_occupancy"]
        if not 0.0 <= occ <= 1.0:
            raise ParseError(f"{where}: achieved_occupancy must be within [0,1], got {occ}")
        per_sm.append(
            SmCounters(
                sm_index=sm,
                fao_warp_instructions=_int_metric(per["shared_atom"], where),
                cas_warp_instructions=_int_metric(per["shared_atom_cas"], where),
                active_cycles=_int_metric(per["active_cycles"], where),
                achieved_occupancy=occ,
            )
        )
    name = kernel_name or file_kernel or Path(path).stem
    return CounterDump(
        kernel_name=name, gpu=gpu, total_atomic_ops=None, per_sm=tuple(per_sm)
    )


# --- NCU-style aggregate CSV -------------------------------------------------


def parse_ncu_csv(path: str | Path) -> AggregateCounters:
    """Extract the shared-atomic thread-operation total from an NCU-style CSV.

    Only the ``.sum`` aggregation of the shared-atomic metric is consumed;
    min/max/avg rows are ignored.
    """
    rows = _read_csv_rows(path)
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    metric_col = _find_column(header, _METRIC_COLUMNS)
    value_col = _find_column(header, _VALUE_COLUMNS)
    kernel_col = _find_column(header, _KERNEL_COLUMNS)
    if metric_col is None or value_col is None:
        raise ParseError(f"{path}: expected 'Metric Name','Metric Value' columns")

    total: int | None = None
    kernel: str | None = None
    for k, row in enumerate(rows[1:], start=2):
        if len(row) <= max(metric_col, value_col):
            raise ParseError(f"{path} line {k}: too few columns")
        name = row[metric_col].lower()
        if NCU_ATOMIC_SUBSTRING not in name or not name.endswith(NCU_SUM_SUFFIX):
            continue
        value = _int_metric(
            _numeric(row[value_col], f"{path} line {k}"), f"{path} line {k}"
        )
        if total is not None and value != total:
            raise MetricConflictError(
                f"{path}: conflicting values for the shared-atomic sum "
                f"({total} vs {value})"
            )
        total = value
        if kernel_col is not None and len(row) > kernel_col and kernel is None:
            kernel = row[kernel_col]
    if total is None:
        raise MissingMetricError(f"{NCU_ATOMIC_SUBSTRING}*{NCU_SUM_SUFFIX}")
    return AggregateCounters(total_atomic_ops=total, kernel_name=kernel)


def merge(per_sm_dump: CounterDump, aggregate: AggregateCounters) -> CounterDump:
    """Fill the aggregate operation total into a per-SM dump.

    Per-SM values are never altered. Kernel names must match when both
    sides carry one.
    """
    if (
        aggregate.kernel_name is not None
        and per_sm_dump.kernel_name != aggregate.kernel_name
    ):
        raise KernelMismatchError(
            f"per-SM dump is for kernel {per_sm_dump.kernel_name!r} but "
            f"aggregate data is for {aggregate.kernel_name!r}"
        )
    return replace(per_sm_dump, total_atomic_ops=aggregate.total_atomic_ops)
