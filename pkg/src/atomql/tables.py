"""Load-dependent service-time tables for the shared-memory atomic unit.

The atomic unit of one streaming multiprocessor (SM) is modeled as a single
server. A job is one atomic warp-instruction, and its per-job service time
depends on three things: the load ``n`` (warp-instructions queued or in
service, at most the SM's resident-warp limit), the active threads per
warp-instruction ``e`` (1..32, bank-conflict serialization), and the number
``c`` of compare-and-swap jobs among the ``n`` (CAS has a longer latency
than fetch-and-op).

A :class:`ParamTable` stores the calibrated total drain time
``total_cycles(n, e, c)`` measured once per GPU model: the time for a batch
of ``n`` simultaneously issued warp-instructions (``c`` of them CAS, each
with ``e`` active threads) to complete. Per-job service time is the drain
time divided by the batch size:

    service_time(n, e, c) = total_time(n, e, c) / n

Lookups at non-integral coordinates use trilinear interpolation on the
integral grid, with the implicit anchor ``total_time(0, e, c) = 0``. The
grid is ragged in ``c`` (only ``c <= n`` is meaningful); when ``n`` falls
between two integral planes, ``c`` is clamped into each bracketing plane's
valid range before the corner values are read, so no samples are invented.

Out-of-range coordinates degrade gracefully instead of aborting an
analysis: ``e`` and ``c`` are clamped into their domains and ``n`` above
the resident-warp limit is clamped down, each with a :class:`ClampWarning`.
Only negative or non-finite coordinates raise :class:`OutOfRangeError`.
"""

from __future__ import annotations

import enum
import math
import os
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AtomqlError,
    MissingCellError,
    NonPositiveTimeError,
    OutOfRangeError,
    SpecMismatchError,
    TableFormatError,
    ZeroLoadError,
)

WARP_SIZE = 32
MAX_ACTIVE_THREADS = 32


class ClampWarning(UserWarning):
    """A lookup coordinate was pulled back into the table domain."""


@dataclass(frozen=True)
class GpuSpec:
    """Architecture constants of one GPU model."""

    name: str
    warps_per_sm: int
    sm_count: int
    warp_size: int = WARP_SIZE

    def __post_init__(self):
        if not self.name:
            raise AtomqlError("GPU name must be non-empty")
        if self.warps_per_sm < 1:
            raise AtomqlError(f"warps_per_sm must be >= 1, got {self.warps_per_sm}")
        if self.sm_count < 1:
            raise AtomqlError(f"sm_count must be >= 1, got {self.sm_count}")
        if self.warp_size != WARP_SIZE:
            raise AtomqlError(f"warp_size is fixed at {WARP_SIZE}")


TITAN_V = GpuSpec("titan-v", warps_per_sm=64, sm_count=80)
A6000 = GpuSpec("a6000", warps_per_sm=48, sm_count=84)

_BUILTIN_PRESETS = {
    "titan-v": TITAN_V,
    "a6000": A6000,
    "volta": TITAN_V,
    "ampere": A6000,
}

PRESETS_ENV_VAR = "ATOMQL_GPU_PRESETS"


class JobClass(enum.Enum):
    """Shared-memory atomic warp-instruction classes.

    POPC_INC (population-count increment, Ampere) has no dedicated table
    axis; it is costed on the fetch-and-op axis unless the table declares
    itself POPC-calibrated.
    """

    FAO = "fao"
    CAS = "cas"
    POPC_INC = "popc_inc"

    @property
    def counts_as_cas(self) -> bool:
        return self is JobClass.CAS


@dataclass(frozen=True, eq=False)
class ParamTable:
    """Dense grid of total drain times ``total_cycles(n, e, c)`` for one GPU.

    ``samples`` has shape ``(warps_per_sm, 32, warps_per_sm + 1)`` indexed by
    ``[n - 1, e - 1, c]``. Cells with ``c > n`` are NaN padding; every valid
    cell holds a finite, strictly positive, whole-number cycle count (cycle
    samples come from integral hardware clocks). Instances are immutable and
    safe for concurrent reads.
    """

    gpu: GpuSpec
    samples: np.ndarray
    metadata: str = ""
    popc_calibrated: bool = False

    def __post_init__(self):
        n_max = self.gpu.warps_per_sm
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.shape != (n_max, MAX_ACTIVE_THREADS, n_max + 1):
            raise TableFormatError(
                f"samples shape {arr.shape} does not match "
                f"({n_max}, {MAX_ACTIVE_THREADS}, {n_max + 1})"
            )
        valid = self._valid_mask(n_max)
        values = arr[valid]
        if not np.isfinite(values).all():
            bad = self._first_cell(valid & ~np.isfinite(arr), n_max)
            raise MissingCellError([bad])
        if (values <= 0).any():
            n, e, c = self._first_cell(valid & (arr <= 0), n_max)
            raise NonPositiveTimeError(n, e, c, float(arr[n - 1, e - 1, c]))
        if (values != np.rint(values)).any() or (values >= 2.0**63).any():
            raise TableFormatError(
                "cycle samples must be 64-bit-representable whole numbers"
            )
        if not np.isnan(arr[~valid]).all():
            raise TableFormatError("cells with c > n must be unset (c cannot exceed n)")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamTable):
            return NotImplemented
        return (
            self.gpu == other.gpu
            and self.metadata == other.metadata
            and self.popc_calibrated == other.popc_calibrated
            and np.array_equal(self.samples, other.samples, equal_nan=True)
        )

    @staticmethod
    def _valid_mask(n_max: int) -> np.ndarray:
        n = np.arange(1, n_max + 1).reshape(-1, 1, 1)
        c = np.arange(0, n_max + 1).reshape(1, 1, -1)
        return np.broadcast_to(c <= n, (n_max, MAX_ACTIVE_THREADS, n_max + 1))

    @staticmethod
    def _first_cell(mask: np.ndarray, n_max: int) -> tuple[int, int, int]:
        i, j, k = np.argwhere(mask)[0]
        return int(i) + 1, int(j) + 1, int(k)

    @property
    def n_max(self) -> int:
        return self.gpu.warps_per_sm

    def cell(self, n: int, e: int, c: int) -> float:
        """Stored sample at an integral grid point."""
        if not (1 <= n <= self.n_max and 1 <= e <= MAX_ACTIVE_THREADS and 0 <= c <= n):
            raise OutOfRangeError(f"(n={n},e={e},c={c}) is not a grid point")
        return float(self.samples[n - 1, e - 1, c])

    def clamp_coords(
        self, n: float, e: float, c: float
    ) -> tuple[float, float, float, frozenset[str]]:
        """Pull coordinates into the lookup domain.

        Returns the (possibly adjusted) coordinates plus the set of axis
        names that were clamped, from {"n", "e", "c"}. Raises
        OutOfRangeError for negative n or non-finite inputs, which no
        clamping policy can repair.
        """
        if not (math.isfinite(n) and math.isfinite(e) and math.isfinite(c)):
            raise OutOfRangeError(f"non-finite lookup coordinate (n={n},e={e},c={c})")
        if n < 0:
            raise OutOfRangeError(f"load n={n} is negative")
        clamped = set()
        if n > self.n_max:
            n = float(self.n_max)
            clamped.add("n")
        if e < 1.0:
            e = 1.0
            clamped.add("e")
        elif e > MAX_ACTIVE_THREADS:
            e = float(MAX_ACTIVE_THREADS)
            clamped.add("e")
        if c < 0.0:
            c = 0.0
            clamped.add("c")
        elif c > n:
            c = float(n)
            clamped.add("c")
        return float(n), float(e), float(c), frozenset(clamped)

    def total_time(self, n: float, e: float, c: float) -> float:
        """Interpolated total drain time, in cycles, for load n.

        Exact at integral grid points; 0 when n is 0. Emits ClampWarning
        when any coordinate had to be clamped.
        """
        n, e, c, clamped = self.clamp_coords(n, e, c)
        if clamped:
            warnings.warn(
                f"lookup clamped on axis {sorted(clamped)} for table '{self.gpu.name}'",
                ClampWarning,
                stacklevel=2,
            )
        return self._interpolate(n, e, c)

    def service_time(self, n: float, e: float, c: float) -> float:
        """Per-job service time: total_time(n, e, c) / n. Undefined at n=0."""
        if n == 0:
            raise ZeroLoadError("service time is undefined at load n=0")
        n, e, c, clamped = self.clamp_coords(n, e, c)
        if clamped:
            warnings.warn(
                f"lookup clamped on axis {sorted(clamped)} for table '{self.gpu.name}'",
                ClampWarning,
                stacklevel=2,
            )
        return self._interpolate(n, e, c) / n

    # Interpolation: linear in n between the bracketing integral planes
    # (plane 0 is the all-zero anchor), bilinear in (e, c) within a plane.
    # Weights of 0 drop out exactly, so integral coordinates reproduce the
    # stored samples bit-for-bit.

    def _interpolate(self, n: float, e: float, c: float) -> float:
        if n == 0.0:
            return 0.0
        n0 = math.floor(n)
        fn = n - n0
        v0 = self._plane(n0, e, c)
        if fn == 0.0:
            return v0
        v1 = self._plane(n0 + 1, e, c)
        return (1.0 - fn) * v0 + fn * v1

    def _plane(self, ni: int, e: float, c: float) -> float:
        if ni == 0:
            return 0.0
        cp = c if c <= ni else float(ni)  # ragged axis: this plane only has c <= ni
        e0 = math.floor(e)
        fe = e - e0
        c0 = math.floor(cp)
        fc = cp - c0
        plane = self.samples[ni - 1]
        v00 = plane[e0 - 1, c0]
        ve0 = v00 if fe == 0.0 else (1.0 - fe) * v00 + fe * plane[e0, c0]
        if fc == 0.0:
            return float(ve0)
        v01 = plane[e0 - 1, c0 + 1]
        ve1 = v01 if fe == 0.0 else (1.0 - fe) * v01 + fe * plane[e0, c0 + 1]
        return float((1.0 - fc) * ve0 + fc * ve1)


# --- persistence -------------------------------------------------------------
#
# Table CSV format:
#   # gpu=<name>
#   # warps_per_sm=<int>
#   # sm_count=<int>
#   # metadata="<string, embedded quotes doubled>"
#   # popc_calibrated=<true|false>        (optional, default false)
#   n,e,c,total_cycles
#   1,1,0,66
#   ...
# Rows sorted lexicographically by (n, e, c); values are base-10 integers;
# UTF-8 with LF line endings.

_COLUMN_HEADER = "n,e,c,total_cycles"
_METADATA_RE = re.compile(r'^"((?:[^"]|"")*)"$')


def save_table(table: ParamTable, path: str | Path) -> None:
    """Write a table file; load_table reads it back bit-exactly."""
    n_max = table.n_max
    quoted = table.metadata.replace('"', '""')
    lines = [
        f"# gpu={table.gpu.name}",
        f"# warps_per_sm={table.gpu.warps_per_sm}",
        f"# sm_count={table.gpu.sm_count}",
        f'# metadata="{quoted}"',
    ]
    if table.popc_calibrated:
        lines.append("# popc_calibrated=true")
    lines.append(_COLUMN_HEADER)
    samples = table.samples
    for n in range(1, n_max + 1):
        for e in range(1, MAX_ACTIVE_THREADS + 1):
            row = samples[n - 1, e - 1]
            for c in range(0, n + 1):
                lines.append(f"{n},{e},{c},{int(row[c])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_table(path: str | Path) -> ParamTable:
    """Parse a table file and validate the full grid."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise TableFormatError(f"cannot read table file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise TableFormatError(f"table file {path} is not UTF-8: {exc}") from exc

    headers: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        key, sep, value = body.partition("=")
        if not sep:
            raise TableFormatError(f"malformed header line: {lines[i]!r}")
        headers[key.strip()] = value.strip()
        i += 1
    if i >= len(lines) or lines[i].strip() != _COLUMN_HEADER:
        raise TableFormatError(f"expected column header {_COLUMN_HEADER!r}")
    i += 1

    for required in ("gpu", "warps_per_sm", "sm_count"):
        if required not in headers:
            raise TableFormatError(f"missing header: # {required}=")
    try:
        gpu = GpuSpec(
            headers["gpu"],
            warps_per_sm=int(headers["warps_per_sm"]),
            sm_count=int(headers["sm_count"]),
        )
    except ValueError as exc:
        raise TableFormatError(f"malformed header value: {exc}") from exc

    metadata = ""
    if "metadata" in headers:
        m = _METADATA_RE.match(headers["metadata"])
        if not m:
            raise TableFormatError("metadata header must be a double-quoted string")
        metadata = m.group(1).replace('""', '"')
    popc = headers.get("popc_calibrated", "false").lower()
    if popc not in ("true", "false"):
        raise TableFormatError(f"popc_calibrated must be true or false, got {popc!r}")

    rows = np.empty((len(lines) - i, 4), dtype=np.int64)
    count = 0
    for line in lines[i:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise TableFormatError(f"expected 4 columns, got {len(parts)}: {line!r}")
        try:
            rows[count] = [int(p) for p in parts]
        except ValueError as exc:
            raise TableFormatError(f"non-integer cell in row {line!r}") from exc
        count += 1
    rows = rows[:count]
    return table_from_rows(gpu, rows, metadata=metadata, popc_calibrated=popc == "true")


def table_from_rows(
    gpu: GpuSpec,
    rows: np.ndarray,
    metadata: str = "",
    popc_calibrated: bool = False,
) -> ParamTable:
    """Assemble and validate a table from (n, e, c, total_cycles) rows."""
    n_max = gpu.warps_per_sm
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise TableFormatError("rows must be an (N, 4) array of n,e,c,total_cycles")
    if rows.shape[0] == 0:
        raise MissingCellError(missing_cells(gpu, rows))

    n, e, c, t = rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3]
    over = n > n_max
    if over.any():
        j = int(np.argmax(over))
        raise SpecMismatchError(
            f"row has n={n[j]} but warps_per_sm={n_max}; "
            "header inconsistent with grid contents"
        )
    if (n < 1).any():
        raise TableFormatError("rows with n < 1 are not valid grid cells")
    if ((e < 1) | (e > MAX_ACTIVE_THREADS)).any():
        raise TableFormatError("rows with e outside 1..32 are not valid grid cells")
    bad_c = (c < 0) | (c > n)
    if bad_c.any():
        j = int(np.argmax(bad_c))
        raise TableFormatError(f"row (n={n[j]},e={e[j]},c={c[j]}) violates 0 <= c <= n")
    nonpos = t <= 0
    if nonpos.any():
        j = int(np.argmax(nonpos))
        raise NonPositiveTimeError(int(n[j]), int(e[j]), int(c[j]), int(t[j]))

    flat = (n - 1) * (MAX_ACTIVE_THREADS * (n_max + 1)) + (e - 1) * (n_max + 1) + c
    uniq, counts = np.unique(flat, return_counts=True)
    if (counts > 1).any():
        dup = int(uniq[np.argmax(counts > 1)])
        dn, rem = divmod(dup, MAX_ACTIVE_THREADS * (n_max + 1))
        de, dc = divmod(rem, n_max + 1)
        raise TableFormatError(f"duplicate cell (n={dn + 1},e={de + 1},c={dc})")

    grid = np.full((n_max, MAX_ACTIVE_THREADS, n_max + 1), np.nan)
    grid[n - 1, e - 1, c] = t.astype(np.float64)

    valid = ParamTable._valid_mask(n_max)
    holes = valid & np.isnan(grid)
    if holes.any():
        cells = [(int(i) + 1, int(j) + 1, int(k)) for i, j, k in np.argwhere(holes)]
        raise MissingCellError(cells)
    return ParamTable(gpu, grid, metadata=metadata, popc_calibrated=popc_calibrated)


def missing_cells(gpu: GpuSpec, rows: np.ndarray) -> list[tuple[int, int, int]]:
    """All grid cells a row set fails to cover, in (n, e, c) order."""
    n_max = gpu.warps_per_sm
    present = np.zeros((n_max, MAX_ACTIVE_THREADS, n_max + 1), dtype=bool)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    for rn, re_, rc, _ in rows:
        if 1 <= rn <= n_max and 1 <= re_ <= MAX_ACTIVE_THREADS and 0 <= rc <= rn:
            present[rn - 1, re_ - 1, rc] = True
    holes = ParamTable._valid_mask(n_max) & ~present
    return [(int(i) + 1, int(j) + 1, int(k)) for i, j, k in np.argwhere(holes)]


def grid_cell_count(gpu: GpuSpec) -> int:
    n_max = gpu.warps_per_sm
    return MAX_ACTIVE_THREADS * sum(n + 1 for n in range(1, n_max + 1))


# --- GPU presets --------------------------------------------------------------


def gpu_preset(name: str, presets_path: str | Path | None = None) -> GpuSpec:
    """Resolve a GPU preset by name.

    Built-ins: titan-v (volta), a6000 (ampere). A preset file can add or
    override entries; it is taken from ``presets_path`` or the
    ``ATOMQL_GPU_PRESETS`` environment variable and uses the same ``#``
    header grammar as table files, one block per GPU starting at ``# gpu=``.
    """
    presets = dict(_BUILTIN_PRESETS)
    if presets_path is None:
        presets_path = os.environ.get(PRESETS_ENV_VAR)
    if presets_path:
        presets.update(load_presets_file(presets_path))
    key = name.strip().lower()
    if key not in presets:
        known = ", ".join(sorted(presets))
        raise AtomqlError(f"unknown GPU preset {name!r}; known presets: {known}")
    return presets[key]


def load_presets_file(path: str | Path) -> dict[str, GpuSpec]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise AtomqlError(f"cannot read GPU presets file {path}: {exc}") from exc
    presets: dict[str, GpuSpec] = {}
    current: dict[str, str] = {}

    def flush():
        if not current:
            return
        for req in ("gpu", "warps_per_sm", "sm_count"):
            if req not in current:
                raise AtomqlError(f"preset block missing # {req}= in {path}")
        try:
            spec = GpuSpec(
                current["gpu"],
                warps_per_sm=int(current["warps_per_sm"]),
                sm_count=int(current["sm_count"]),
            )
        except ValueError as exc:
            raise AtomqlError(f"malformed preset value in {path}: {exc}") from exc
        presets[spec.name.lower()] = spec

    for line in text.splitlines():
        line = line.strip()
        if not line or not line.startswith("#"):
            continue
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            continue
        key = key.strip()
        if key == "gpu":
            flush()
            current = {}
        current[key] = value.strip()
    flush()
    return presets
