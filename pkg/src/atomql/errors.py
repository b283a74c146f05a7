"""Exception hierarchy. Everything this package raises on bad input derives
from AtomqlError so callers (and the CLI) can catch one type."""

from __future__ import annotations


class AtomqlError(Exception):
    """Base class for all errors raised by atomql."""


# --- service-time table errors ---------------------------------------------

class TableFormatError(AtomqlError):
    """Table file is structurally malformed (headers, columns, duplicates)."""


class MissingCellError(AtomqlError):
    """Grid has holes: one or more (n, e, c) cells absent."""

    def __init__(self, cells: list[tuple[int, int, int]]):
        self.cells = cells
        shown = ", ".join(f"(n={n},e={e},c={c})" for n, e, c in cells[:5])
        more = f" and {len(cells) - 5} more" if len(cells) > 5 else ""
        super().__init__(f"{len(cells)} missing grid cell(s): {shown}{more}")


class NonPositiveTimeError(AtomqlError):
    """A stored cycle sample is zero or negative."""

    def __init__(self, n: int, e: int, c: int, value: float):
        self.cell = (n, e, c)
        super().__init__(f"non-positive cycle count {value} at (n={n},e={e},c={c})")


class SpecMismatchError(AtomqlError):
    """Declared warps-per-SM inconsistent with the grid contents."""


class OutOfRangeError(AtomqlError):
    """Lookup coordinate outside the table domain even after clamping."""


class ZeroLoadError(AtomqlError):
    """Per-job service time requested at load 0, where it is undefined."""


# --- counter ingest errors --------------------------------------------------

class ParseError(AtomqlError):
    """Counter file malformed or violating the schema; message carries the
    offending field path or row."""


class MissingMetricError(AtomqlError):
    def __init__(self, metric: str):
        self.metric = metric
        super().__init__(f"required metric not found: {metric}")


class MetricConflictError(AtomqlError):
    """Same metric reported more than once with different values."""


class KernelMismatchError(AtomqlError):
    """Attempted to merge counter files from different kernel launches."""


# --- derivation errors -------------------------------------------------------

class NoAtomicJobsError(AtomqlError):
    """Kernel executed no shared-memory atomic warp-instructions."""


class MissingTotalOpsError(AtomqlError):
    """Thread-level atomic operation total absent (no NCU data); the average
    active-thread count cannot be derived."""


class GpuMismatchError(AtomqlError):
    """Counter dump and service-time table were collected on different GPUs."""


# --- simulation errors -------------------------------------------------------

class ScenarioError(AtomqlError):
    """Workload scenario fails schema or consistency validation."""


class InfeasibleScenarioError(AtomqlError):
    """Scenario duration is shorter than the busy time it implies."""
