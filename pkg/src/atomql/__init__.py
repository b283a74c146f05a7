"""Operational queueing analysis of GPU shared-memory atomic units.

The package models the shared-memory atomic unit of each streaming
multiprocessor as a load-dependent single-server queue. Calibrated
service-time tables plus a handful of hardware performance counters are
enough to estimate what fraction of a kernel's runtime the atomic unit was
busy, per SM, and therefore whether shared-memory atomics are the
bottleneck.
"""

from .counters import (
    AggregateCounters,
    CounterDump,
    SmCounters,
    merge,
    parse_canonical,
    parse_ncu_csv,
    parse_nvprof_csv,
    write_canonical,
)
from .derive import (
    DerivedQuantities,
    Flag,
    KernelSummary,
    derive_all,
    derive_e,
    derive_sm,
)
from .errors import AtomqlError
from .sim import (
    DEFAULT_FAMILY,
    Job,
    Scenario,
    SimTrace,
    SyntheticFamily,
    closed_batch,
    constant_service,
    generate_dump,
    load_scenario,
    poisson_jobs,
    service_from_table,
    simulate,
    simulate_scenario,
    synthesize_table,
)
from .tables import (
    A6000,
    TITAN_V,
    ClampWarning,
    GpuSpec,
    JobClass,
    ParamTable,
    gpu_preset,
    load_table,
    save_table,
)

__version__ = "0.1.0"

__all__ = [
    "A6000",
    "AggregateCounters",
    "AtomqlError",
    "ClampWarning",
    "CounterDump",
    "DEFAULT_FAMILY",
    "DerivedQuantities",
    "Flag",
    "GpuSpec",
    "Job",
    "JobClass",
    "KernelSummary",
    "ParamTable",
    "Scenario",
    "SimTrace",
    "SmCounters",
    "SyntheticFamily",
    "TITAN_V",
    "closed_batch",
    "constant_service",
    "derive_all",
    "derive_e",
    "derive_sm",
    "generate_dump",
    "gpu_preset",
    "load_scenario",
    "load_table",
    "merge",
    "parse_canonical",
    "parse_ncu_csv",
    "parse_nvprof_csv",
    "poisson_jobs",
    "save_table",
    "service_from_table",
    "simulate",
    "simulate_scenario",
    "synthesize_table",
    "write_canonical",
]
