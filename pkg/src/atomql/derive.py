"""Derived operational quantities and the per-SM utilization verdict.

From the basic counters of one kernel launch the following are derived for
each SM ``i``:

    total jobs          N  = fao + cas warp-instructions
    avg parallelism     n  = achieved_occupancy * warps_per_sm
    avg active threads  e  = total_atomic_ops / sum_i(N_i)   (shared by all
                             SMs; NCU only reports across-SM aggregates)
    avg queued CAS      c  = n * cas / N
    per-job service     S  = service_time(n, e, c) from the table
    busy cycles         B  = N * S
    utilization         U  = B / active_cycles

Utilization is reported raw even when it exceeds 1 (parallelism inferred
from occupancy can overestimate the true load); the OVER100 flag marks the
anomaly instead of capping it.
"""

from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass

from .counters import CounterDump, SmCounters
from .errors import (
    GpuMismatchError,
    MissingTotalOpsError,
    NoAtomicJobsError,
    ZeroLoadError,
)
from .tables import MAX_ACTIVE_THREADS, GpuSpec, ParamTable


class Flag(str, enum.Enum):
    """Diagnostics attached to derived quantities."""

    OVER100 = "over100"
    CLAMPED_LOAD = "clamped_load"
    CLAMPED_THREADS = "clamped_threads"
    ASSUMED_THREADS = "assumed_threads"
    POPC_AS_FAO = "popc_as_fao"


VERDICT_ATOMIC_BOUND = "atomic-unit bound"
VERDICT_SIGNIFICANT = "significant"
VERDICT_NOT_BOTTLENECK = "not a bottleneck"
VERDICT_NO_ATOMICS = "no shared-memory atomics executed"

# Heuristic reporting thresholds on the median per-SM utilization; high
# utilization marks the atomic unit as the bottleneck.
ATOMIC_BOUND_THRESHOLD = 0.9
SIGNIFICANT_THRESHOLD = 0.5


@dataclass(frozen=True)
class DerivedQuantities:
    """Table-2 style derived values for one SM.

    ``service_time_cycles`` is None when the SM executed no atomic jobs
    (there is nothing to look up and busy time is forced to 0).
    """

    sm_index: int
    total_jobs: int
    avg_parallelism: float
    avg_active_threads: float
    avg_queued_cas: float
    service_time_cycles: float | None
    busy_cycles: float
    active_cycles: int
    utilization: float
    flags: frozenset[Flag]


@dataclass(frozen=True)
class KernelSummary:
    kernel_name: str
    gpu: GpuSpec
    avg_active_threads: float | None
    e_assumed: bool
    u_min: float
    u_median: float
    u_max: float
    verdict: str
    flags: frozenset[Flag]


def derive_e(dump: CounterDump) -> tuple[float, frozenset[Flag]]:
    """Average active threads per warp-instruction, shared across SMs.

    Clamped into [1, 32] with CLAMPED_THREADS when counter noise pushes the
    ratio outside the physical range.
    """
    if dump.total_atomic_ops is None:
        raise MissingTotalOpsError(
            "dump has no thread-level operation total; supply NCU data or an "
            "assumed active-thread count"
        )
    total_jobs = dump.total_warp_instructions
    if total_jobs == 0:
        raise NoAtomicJobsError("no shared-memory atomics executed")
    e = dump.total_atomic_ops / total_jobs
    if e < 1.0:
        return 1.0, frozenset({Flag.CLAMPED_THREADS})
    if e > MAX_ACTIVE_THREADS:
        return float(MAX_ACTIVE_THREADS), frozenset({Flag.CLAMPED_THREADS})
    return e, frozenset()


def derive_sm(
    sm: SmCounters,
    e: float,
    gpu: GpuSpec,
    table: ParamTable,
    extra_flags: frozenset[Flag] = frozenset(),
) -> DerivedQuantities:
    """Derive one SM's quantities from its counters.

    Pure function; safe to evaluate SMs concurrently against a shared table.
    """
    total_jobs = sm.total_jobs
    n_hat = sm.achieved_occupancy * gpu.warps_per_sm
    flags = set(extra_flags)

    if total_jobs == 0:
        return DerivedQuantities(
            sm_index=sm.sm_index,
            total_jobs=0,
            avg_parallelism=n_hat,
            avg_active_threads=e,
            avg_queued_cas=0.0,
            service_time_cycles=None,
            busy_cycles=0.0,
            active_cycles=sm.active_cycles,
            utilization=0.0,
            flags=frozenset(flags),
        )

    if n_hat == 0.0:
        raise ZeroLoadError(
            f"sm {sm.sm_index}: occupancy is 0 but {total_jobs} atomic jobs "
            "were counted; counters are inconsistent"
        )

    c = n_hat * (sm.cas_warp_instructions / total_jobs)
    cn, ce, cc, clamped = table.clamp_coords(n_hat, e, c)
    if "n" in clamped or "c" in clamped:
        flags.add(Flag.CLAMPED_LOAD)
    if "e" in clamped:
        flags.add(Flag.CLAMPED_THREADS)
    service = table.service_time(cn, ce, cc)
    busy = total_jobs * service
    utilization = busy / sm.active_cycles
    if utilization > 1.0:
        flags.add(Flag.OVER100)
    return DerivedQuantities(
        sm_index=sm.sm_index,
        total_jobs=total_jobs,
        avg_parallelism=n_hat,
        avg_active_threads=e,
        avg_queued_cas=c,
        service_time_cycles=service,
        busy_cycles=busy,
        active_cycles=sm.active_cycles,
        utilization=utilization,
        flags=frozenset(flags),
    )


def derive_all(
    dump: CounterDump,
    table: ParamTable,
    assume_e: float | None = None,
    allow_gpu_mismatch: bool = False,
    popc_as_fao: bool = False,
) -> tuple[list[DerivedQuantities], KernelSummary]:
    """Derive quantities for every SM plus the kernel-level summary.

    ``assume_e`` replaces the counter-derived active-thread average when NCU
    data is missing (flagged ASSUMED_THREADS). ``popc_as_fao`` marks that
    the kernel's POPC increments were costed on the fetch-and-op axis.
    """
    if dump.gpu.name != table.gpu.name and not allow_gpu_mismatch:
        raise GpuMismatchError(
            f"dump was collected on {dump.gpu.name!r} but the table is for "
            f"{table.gpu.name!r}"
        )
    if not dump.per_sm:
        raise NoAtomicJobsError("dump contains no per-SM counters")

    base_flags: set[Flag] = set()
    if popc_as_fao and not table.popc_calibrated:
        base_flags.add(Flag.POPC_AS_FAO)

    no_atomics = dump.total_warp_instructions == 0
    if no_atomics:
        e: float | None = None
        e_assumed = False
        row_e = 0.0
        e_flags: frozenset[Flag] = frozenset()
    elif assume_e is not None:
        if not 1.0 <= assume_e <= MAX_ACTIVE_THREADS:
            raise ValueError(
                f"assumed active threads must be in [1, {MAX_ACTIVE_THREADS}]"
            )
        e = row_e = float(assume_e)
        e_assumed = True
        e_flags = frozenset({Flag.ASSUMED_THREADS})
    else:
        e, e_flags = derive_e(dump)
        row_e = e
        e_assumed = False

    rows = [
        derive_sm(sm, row_e, dump.gpu, table, extra_flags=e_flags | base_flags)
        for sm in sorted(dump.per_sm, key=lambda s: s.sm_index)
    ]
    utils = [row.utilization for row in rows]
    all_flags = frozenset().union(*(row.flags for row in rows))
    u_median = statistics.median(utils)
    summary = KernelSummary(
        kernel_name=dump.kernel_name,
        gpu=dump.gpu,
        avg_active_threads=e,
        e_assumed=e_assumed,
        u_min=min(utils),
        u_median=u_median,
        u_max=max(utils),
        verdict=VERDICT_NO_ATOMICS if no_atomics else verdict_for(u_median),
        flags=all_flags,
    )
    return rows, summary


def verdict_for(median_utilization: float) -> str:
    if median_utilization >= ATOMIC_BOUND_THRESHOLD:
        return VERDICT_ATOMIC_BOUND
    if median_utilization >= SIGNIFICANT_THRESHOLD:
        return VERDICT_SIGNIFICANT
    return VERDICT_NOT_BOTTLENECK
