"""Discrete-event simulation of a load-dependent single-server queue.

This module is the independent oracle for the operational identities the
analysis relies on, and the generator for synthetic calibration tables and
counter dumps used in end-to-end tests.

Queue semantics
---------------
The server's capacity is shared equally by every job in the system
(processor sharing), and each job's work requirement is the per-job service
time evaluated at the *current* system state: a job with ``e`` active
threads needs ``S(n, e, c)`` cycles of dedicated server time while the
system holds ``n`` jobs of which ``c`` are CAS-class. Equivalently, job
``j`` completes its remaining fraction at rate

    d(fraction)/dt = 1 / (n * S(n, e_j, c))

and remaining work is rescaled whenever the state changes. Under these
semantics a closed batch of ``n`` identical jobs issued at cycle 0 drains
at exactly ``n * S(n, e, c)``, which is the same construction used to
calibrate the tables, so table and simulator are directly comparable.

POPC_INC jobs occupy the server like FAO jobs and do not count toward
``c``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .counters import CounterDump, SmCounters
from .errors import InfeasibleScenarioError, ScenarioError
from .tables import MAX_ACTIVE_THREADS, GpuSpec, JobClass, ParamTable

ServiceFunction = Callable[[int, int, int], float]

# Jobs whose remaining fraction falls below this are considered complete;
# it absorbs float drift when identical jobs finish simultaneously.
_COMPLETION_EPS = 1e-12


@dataclass(frozen=True)
class Job:
    id: int
    job_class: JobClass
    active_threads: int
    arrival_cycle: float

    def __post_init__(self):
        if not 1 <= self.active_threads <= MAX_ACTIVE_THREADS:
            raise ScenarioError(
                f"active_threads must be in 1..{MAX_ACTIVE_THREADS}, "
                f"got {self.active_threads}"
            )
        if not (math.isfinite(self.arrival_cycle) and self.arrival_cycle >= 0):
            raise ScenarioError(f"arrival_cycle must be >= 0, got {self.arrival_cycle}")


@dataclass(frozen=True)
class SimTrace:
    """Result of one simulation run.

    Per-job times are aligned with the input job list. ``total_time`` spans
    first arrival to last completion; ``busy_cycles`` excludes idle gaps.
    """

    arrival: tuple[float, ...]
    service_start: tuple[float, ...]
    completion: tuple[float, ...]
    total_time: float
    busy_cycles: float
    completions: int


def constant_service(cycles: float) -> ServiceFunction:
    """Service function that ignores system state."""
    if not cycles > 0:
        raise ScenarioError(f"service time must be positive, got {cycles}")
    return lambda n, e, c: cycles


def service_from_table(table: ParamTable) -> ServiceFunction:
    """Per-job service time from a calibrated table.

    Coordinates are clamped silently: open-arrival runs can push the load
    past the table's warp limit, where the last sampled plane is held.
    """

    def service(n: int, e: int, c: int) -> float:
        cn, ce, cc, _ = table.clamp_coords(n, e, c)
        return table.service_time(cn, ce, cc)

    return service


def simulate(
    jobs: Sequence[Job], service: ServiceFunction, discipline: str = "fifo"
) -> SimTrace:
    """Run the queue to drain and return the full trace.

    Jobs must be sorted by arrival cycle. Every arrival is eventually
    completed (job flow balance), so ``completions == len(jobs)``.
    """
    if discipline != "fifo":
        raise ScenarioError(f"unsupported discipline {discipline!r}")
    n_jobs = len(jobs)
    if n_jobs == 0:
        return SimTrace((), (), (), 0.0, 0.0, 0)
    for a, b in zip(jobs, jobs[1:]):
        if b.arrival_cycle < a.arrival_cycle:
            raise ScenarioError("jobs must be sorted by arrival cycle")

    arrival = [j.arrival_cycle for j in jobs]
    start = [0.0] * n_jobs
    completion = [0.0] * n_jobs

    # Active set as parallel lists: remaining fraction, job index, threads,
    # CAS membership. Service starts on entry (all jobs share the server).
    frac: list[float] = []
    idx: list[int] = []
    thr: list[int] = []
    cas: list[bool] = []

    i = 0
    now = arrival[0]
    idle = 0.0

    def admit_due():
        nonlocal i
        while i < n_jobs and arrival[i] <= now:
            frac.append(1.0)
            idx.append(i)
            thr.append(jobs[i].active_threads)
            cas.append(jobs[i].job_class.counts_as_cas)
            start[i] = now
            i += 1

    admit_due()
    while frac or i < n_jobs:
        if not frac:
            idle += arrival[i] - now
            now = arrival[i]
            admit_due()
            continue

        n = len(frac)
        c = sum(cas)
        cache: dict[tuple[int, int], float] = {}
        rates = []
        for k in range(n):
            key = (n, thr[k])
            r = cache.get(key)
            if r is None:
                s = service(n, thr[k], c)
                if not (s > 0 and math.isfinite(s)):
                    raise ScenarioError(f"service({n},{thr[k]},{c}) = {s} is invalid")
                r = 1.0 / (n * s)
                cache[key] = r
            rates.append(r)

        dt = min(f / r for f, r in zip(frac, rates))
        if i < n_jobs:
            dt_arrival = arrival[i] - now
            if dt_arrival < dt:
                dt = dt_arrival
        now += dt
        for k in range(n):
            frac[k] -= dt * rates[k]

        if any(f <= _COMPLETION_EPS for f in frac):
            keep = [k for k in range(n) if frac[k] > _COMPLETION_EPS]
            for k in range(n):
                if frac[k] <= _COMPLETION_EPS:
                    completion[idx[k]] = now
            frac[:] = [frac[k] for k in keep]
            idx[:] = [idx[k] for k in keep]
            thr[:] = [thr[k] for k in keep]
            cas[:] = [cas[k] for k in keep]
        admit_due()

    total = max(completion) - arrival[0]
    busy = total - idle
    if busy < 0.0:
        busy = 0.0
    return SimTrace(
        arrival=tuple(arrival),
        service_start=tuple(start),
        completion=tuple(completion),
        total_time=total,
        busy_cycles=busy,
        completions=n_jobs,
    )


def poisson_jobs(
    count: int,
    rate: float,
    rng: np.random.Generator,
    active_threads: int = 32,
    cas_fraction: float = 0.0,
) -> list[Job]:
    """Open-arrival workload: exponential interarrivals at ``rate`` jobs
    per cycle, each job independently CAS with probability cas_fraction."""
    if rate <= 0:
        raise ScenarioError(f"arrival rate must be positive, got {rate}")
    arrivals = np.cumsum(rng.exponential(1.0 / rate, size=count))
    is_cas = rng.random(count) < cas_fraction
    return [
        Job(
            id=k,
            job_class=JobClass.CAS if is_cas[k] else JobClass.FAO,
            active_threads=active_threads,
            arrival_cycle=float(arrivals[k]),
        )
        for k in range(count)
    ]


def closed_batch(
    size: int, cas_count: int, active_threads: int, arrival_cycle: float = 0.0
) -> list[Job]:
    """``size`` jobs issued at once, the first ``cas_count`` of them CAS."""
    if not 0 <= cas_count <= size:
        raise ScenarioError(f"cas_count {cas_count} outside 0..{size}")
    return [
        Job(
            id=k,
            job_class=JobClass.CAS if k < cas_count else JobClass.FAO,
            active_threads=active_threads,
            arrival_cycle=arrival_cycle,
        )
        for k in range(size)
    ]


# --- synthetic calibration tables ---------------------------------------------


@dataclass(frozen=True)
class SyntheticFamily:
    """Closed-form service-time family for synthesizing tables.

        S(n, e, c) = (alpha*e + beta) * (1 + gamma*c/n) / min(n, pipe_width)
                     + delta

    Parallelism helps until the pipe is full (S nonincreasing in n), bank
    conflicts serialize threads (S nondecreasing in e), and CAS jobs slow
    the mix roughly linearly (S nondecreasing in c). The defaults keep
    those trends intact even after drain times are rounded to whole cycles:
    for n >= pipe_width every value is exactly integral, and below it the
    true deltas between neighboring cells exceed the rounding jitter.
    """

    alpha: float = 32.0
    beta: float = 32.0
    gamma: float = 1.0
    delta: float = 2.0
    pipe_width: int = 32

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"family parameter {name} must be positive")
        if self.pipe_width < 1:
            raise ScenarioError("pipe_width must be >= 1")

    def service_time(self, n: float, e: float, c: float) -> float:
        if n <= 0:
            raise ScenarioError(f"load must be positive, got {n}")
        width = min(n, self.pipe_width)
        return (self.alpha * e + self.beta) * (1.0 + self.gamma * c / n) / width + self.delta

    def as_service(self) -> ServiceFunction:
        return lambda n, e, c: self.service_time(n, e, c)


DEFAULT_FAMILY = SyntheticFamily()


def synthesize_table(
    gpu: GpuSpec,
    family: SyntheticFamily = DEFAULT_FAMILY,
    metadata: str | None = None,
) -> ParamTable:
    """Full calibration table from a closed-form family.

    Drain times are rounded to whole cycles at construction so the table
    round-trips bit-exactly through its file format.
    """
    n_max = gpu.warps_per_sm
    grid = np.full((n_max, MAX_ACTIVE_THREADS, n_max + 1), np.nan)
    e = np.arange(1, MAX_ACTIVE_THREADS + 1, dtype=np.float64).reshape(-1, 1)
    for n in range(1, n_max + 1):
        c = np.arange(0, n + 1, dtype=np.float64).reshape(1, -1)
        s = (family.alpha * e + family.beta) * (1.0 + family.gamma * c / n) / min(
            n, family.pipe_width
        ) + family.delta
        grid[n - 1, :, : n + 1] = np.rint(n * s)
    if metadata is None:
        metadata = (
            f"synthetic alpha={family.alpha} beta={family.beta} "
            f"gamma={family.gamma} delta={family.delta} pipe_width={family.pipe_width}"
        )
    return ParamTable(gpu, grid, metadata=metadata)


# --- workload scenarios ---------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Per-SM workload description for dump generation and simulation.

    The batch arrival process issues jobs in back-to-back closed batches of
    size ``round(occupancy * warps_per_sm)`` so the load the analyzer infers
    from occupancy matches the simulated load. Exactly one of
    ``duration_cycles`` (kernel time given directly), ``target_utilization``
    (duration = busy / target) or ``overhead_cycles`` (duration = busy +
    overhead) fixes the kernel duration.
    """

    jobs_per_sm: int
    active_threads: int
    cas_fraction: float = 0.0
    occupancy: float = 1.0
    duration_cycles: float | None = None
    target_utilization: float | None = None
    overhead_cycles: float | None = None
    sm_count: int | None = None
    kernel_name: str = "synthetic-kernel"
    arrival_process: str = "batches"
    arrival_rate: float | None = None

    def __post_init__(self):
        if self.jobs_per_sm < 0:
            raise ScenarioError(f"jobs_per_sm must be >= 0, got {self.jobs_per_sm}")
        if not 1 <= self.active_threads <= MAX_ACTIVE_THREADS:
            raise ScenarioError(
                f"active_threads must be in 1..{MAX_ACTIVE_THREADS}, "
                f"got {self.active_threads}"
            )
        if not 0.0 <= self.cas_fraction <= 1.0:
            raise ScenarioError(f"cas_fraction must be in [0,1], got {self.cas_fraction}")
        if not 0.0 < self.occupancy <= 1.0:
            raise ScenarioError(f"occupancy must be in (0,1], got {self.occupancy}")
        modes = [
            m
            for m in ("duration_cycles", "target_utilization", "overhead_cycles")
            if getattr(self, m) is not None
        ]
        if len(modes) != 1:
            raise ScenarioError(
                "exactly one of duration_cycles, target_utilization, "
                f"overhead_cycles must be set, got {modes or 'none'}"
            )
        if self.duration_cycles is not None and not self.duration_cycles >= 1:
            raise ScenarioError("duration_cycles must be >= 1")
        if self.target_utilization is not None and not 0 < self.target_utilization:
            raise ScenarioError("target_utilization must be positive")
        if self.overhead_cycles is not None and not self.overhead_cycles >= 0:
            raise ScenarioError("overhead_cycles must be >= 0")
        if self.arrival_process not in ("batches", "poisson"):
            raise ScenarioError(
                f"arrival_process must be 'batches' or 'poisson', "
                f"got {self.arrival_process!r}"
            )
        if self.arrival_process == "poisson":
            if self.arrival_rate is None or self.arrival_rate <= 0:
                raise ScenarioError("poisson arrivals need a positive arrival_rate")
        if self.sm_count is not None and self.sm_count < 1:
            raise ScenarioError("sm_count must be >= 1")

    def batch_size(self, gpu: GpuSpec) -> int:
        n = round(self.occupancy * gpu.warps_per_sm)
        return max(1, n)

    def cas_per_batch(self, batch: int) -> int:
        return round(self.cas_fraction * batch)

    def resolve_sm_count(self, gpu: GpuSpec) -> int:
        if self.sm_count is None:
            return gpu.sm_count
        if self.sm_count > gpu.sm_count:
            raise ScenarioError(
                f"scenario sm_count {self.sm_count} exceeds the GPU's {gpu.sm_count}"
            )
        return self.sm_count


_SCENARIO_FIELDS = {f.name for f in dataclasses.fields(Scenario)}
_REQUIRED_SCENARIO_FIELDS = ("jobs_per_sm", "active_threads")


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    for req in _REQUIRED_SCENARIO_FIELDS:
        if req not in data:
            raise ScenarioError(f"scenario is missing required field {req!r}")
    kwargs = {k: v for k, v in data.items() if k in _SCENARIO_FIELDS}
    try:
        return Scenario(**kwargs)
    except TypeError as exc:
        raise ScenarioError(f"bad scenario field types: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


@dataclass(frozen=True)
class ScenarioRun:
    """One SM's simulated workload plus the resolved kernel duration."""

    trace: SimTrace
    fao_jobs: int
    cas_jobs: int
    busy_cycles: float
    duration_cycles: float


def _shift_trace(trace: SimTrace, offset: float) -> SimTrace:
    return SimTrace(
        arrival=tuple(t + offset for t in trace.arrival),
        service_start=tuple(t + offset for t in trace.service_start),
        completion=tuple(t + offset for t in trace.completion),
        total_time=trace.total_time,
        busy_cycles=trace.busy_cycles,
        completions=trace.completions,
    )


def _concat_traces(traces: list[SimTrace]) -> SimTrace:
    if not traces:
        return SimTrace((), (), (), 0.0, 0.0, 0)
    arrival: list[float] = []
    start: list[float] = []
    completion: list[float] = []
    busy = 0.0
    for t in traces:
        arrival.extend(t.arrival)
        start.extend(t.service_start)
        completion.extend(t.completion)
        busy += t.busy_cycles
    total = max(completion) - min(arrival)
    return SimTrace(
        tuple(arrival), tuple(start), tuple(completion), total, busy, len(arrival)
    )


def simulate_scenario(
    scenario: Scenario, service: ServiceFunction, gpu: GpuSpec, seed: int = 0
) -> ScenarioRun:
    """Simulate one SM's workload and resolve the scenario duration.

    Batch workloads repeat an identical closed batch, so the batch is
    simulated once and replicated with time offsets; the result is
    identical to simulating the batches back to back because the system
    drains between batches.
    """
    if scenario.jobs_per_sm == 0:
        trace = SimTrace((), (), (), 0.0, 0.0, 0)
        duration = _resolve_duration(scenario, 0.0)
        return ScenarioRun(trace, 0, 0, 0.0, duration)

    if scenario.arrival_process == "poisson":
        rng = np.random.default_rng(seed)
        jobs = poisson_jobs(
            scenario.jobs_per_sm,
            scenario.arrival_rate,
            rng,
            active_threads=scenario.active_threads,
            cas_fraction=scenario.cas_fraction,
        )
        trace = simulate(jobs, service)
        cas_jobs = sum(1 for j in jobs if j.job_class.counts_as_cas)
        duration = _resolve_duration(scenario, trace.busy_cycles, trace.total_time)
        return ScenarioRun(
            trace, len(jobs) - cas_jobs, cas_jobs, trace.busy_cycles, duration
        )

    batch = scenario.batch_size(gpu)
    cas_k = scenario.cas_per_batch(batch)
    full, rem = divmod(scenario.jobs_per_sm, batch)

    traces: list[SimTrace] = []
    offset = 0.0
    cas_jobs = 0
    if full:
        one = simulate(closed_batch(batch, cas_k, scenario.active_threads), service)
        for _ in range(full):
            traces.append(_shift_trace(one, offset))
            offset += one.total_time
        cas_jobs += cas_k * full
    if rem:
        cas_rem = scenario.cas_per_batch(rem)
        tail = simulate(closed_batch(rem, cas_rem, scenario.active_threads), service)
        traces.append(_shift_trace(tail, offset))
        cas_jobs += cas_rem
    trace = _concat_traces(traces)
    duration = _resolve_duration(scenario, trace.busy_cycles, trace.total_time)
    return ScenarioRun(
        trace, scenario.jobs_per_sm - cas_jobs, cas_jobs, trace.busy_cycles, duration
    )


def _resolve_duration(
    scenario: Scenario, busy: float, span: float | None = None
) -> float:
    if scenario.duration_cycles is not None:
        duration = scenario.duration_cycles
    elif scenario.target_utilization is not None:
        if busy == 0.0:
            raise InfeasibleScenarioError(
                "target_utilization needs a workload with nonzero busy time"
            )
        duration = busy / scenario.target_utilization
    else:
        # the kernel is live for the whole workload makespan plus overhead
        # (for batch workloads the makespan equals the busy time)
        duration = (busy if span is None else span) + scenario.overhead_cycles
    if duration < 1.0:
        duration = 1.0
    # busy time must fit inside the kernel duration (tiny slack for float
    # rounding in the busy sum)
    if busy > duration * (1.0 + 1e-9):
        raise InfeasibleScenarioError(
            f"scenario duration {duration:.1f} cycles is shorter than the "
            f"simulated busy time {busy:.1f}"
        )
    if span is not None and span > duration * (1.0 + 1e-9):
        raise InfeasibleScenarioError(
            f"scenario duration {duration:.1f} cycles is shorter than the "
            f"simulated makespan {span:.1f}"
        )
    return duration


def _scenario_ground_truth(
    scenario: Scenario, service: ServiceFunction, gpu: GpuSpec, seed: int
) -> tuple[float, float, int, int]:
    """(busy, makespan, fao, cas) for one SM, without materializing traces.

    Batch workloads repeat identical closed batches, so one batch (plus one
    partial batch) is simulated and the totals are scaled.
    """
    if scenario.jobs_per_sm == 0:
        return 0.0, 0.0, 0, 0
    if scenario.arrival_process == "poisson":
        rng = np.random.default_rng(seed)
        jobs = poisson_jobs(
            scenario.jobs_per_sm,
            scenario.arrival_rate,
            rng,
            active_threads=scenario.active_threads,
            cas_fraction=scenario.cas_fraction,
        )
        trace = simulate(jobs, service)
        cas_jobs = sum(1 for j in jobs if j.job_class.counts_as_cas)
        return (
            trace.busy_cycles,
            trace.total_time,
            len(jobs) - cas_jobs,
            cas_jobs,
        )
    batch = scenario.batch_size(gpu)
    cas_k = scenario.cas_per_batch(batch)
    full, rem = divmod(scenario.jobs_per_sm, batch)
    busy = 0.0
    cas_jobs = 0
    if full:
        one = simulate(closed_batch(batch, cas_k, scenario.active_threads), service)
        busy += full * one.total_time
        cas_jobs += cas_k * full
    if rem:
        cas_rem = scenario.cas_per_batch(rem)
        tail = simulate(closed_batch(rem, cas_rem, scenario.active_threads), service)
        busy += tail.total_time
        cas_jobs += cas_rem
    return busy, busy, scenario.jobs_per_sm - cas_jobs, cas_jobs


def generate_dump(scenario: Scenario, table: ParamTable, seed: int = 0) -> CounterDump:
    """Counter dump whose values are the simulated ground truth.

    Every SM runs the same scenario workload: warp-instruction counts come
    from the job mix, the thread-level operation total is the sum of active
    threads over all jobs, kernel time is the resolved duration, and
    occupancy is the configured value.
    """
    gpu = table.gpu
    busy, span, fao_jobs, cas_jobs = _scenario_ground_truth(
        scenario, service_from_table(table), gpu, seed
    )
    duration = _resolve_duration(scenario, busy, span)
    sm_count = scenario.resolve_sm_count(gpu)
    active_cycles = max(1, math.ceil(duration))
    per_sm = tuple(
        SmCounters(
            sm_index=sm,
            fao_warp_instructions=fao_jobs,
            cas_warp_instructions=cas_jobs,
            active_cycles=active_cycles,
            achieved_occupancy=scenario.occupancy,
        )
        for sm in range(sm_count)
    )
    total_ops = scenario.active_threads * scenario.jobs_per_sm * sm_count
    return CounterDump(
        kernel_name=scenario.kernel_name,
        gpu=gpu,
        total_atomic_ops=total_ops,
        per_sm=per_sm,
    )
