"""Derived-quantity tests: active-thread estimate, per-SM derivation, summary."""

import numpy as np
import pytest

from atomql import CounterDump, GpuSpec, SmCounters, derive_all, derive_e, derive_sm
from atomql.derive import (
    Flag,
    VERDICT_ATOMIC_BOUND,
    VERDICT_NO_ATOMICS,
    VERDICT_NOT_BOTTLENECK,
    VERDICT_SIGNIFICANT,
    verdict_for,
)
from atomql.errors import (
    GpuMismatchError,
    MissingTotalOpsError,
    NoAtomicJobsError,
    ZeroLoadError,
)
from atomql.tables import TITAN_V

MINI = GpuSpec("mini", warps_per_sm=8, sm_count=4)


def dump_for(per_sm, total_ops, gpu=MINI, kernel="k"):
    return CounterDump(kernel, gpu, total_ops, tuple(per_sm))


# --- derive_e -----------------------------------------------------------------


def test_derive_e_solid_case():
    # all threads hit the same location: 320 thread ops over 10 warp jobs
    dump = dump_for([SmCounters(0, 10, 0, 1000, 0.25)], total_ops=320)
    e, flags = derive_e(dump)
    assert e == 32.0
    assert flags == frozenset()


def test_derive_e_random_case():
    dump = dump_for([SmCounters(0, 10, 0, 1000, 0.25)], total_ops=30)
    e, flags = derive_e(dump)
    assert e == 3.0
    assert flags == frozenset()


def test_derive_e_clamps_counter_noise():
    dump = dump_for([SmCounters(0, 10, 0, 1000, 0.25)], total_ops=330)
    e, flags = derive_e(dump)
    assert e == 32.0
    assert Flag.CLAMPED_THREADS in flags

    dump = dump_for([SmCounters(0, 10, 0, 1000, 0.25)], total_ops=5)
    e, flags = derive_e(dump)
    assert e == 1.0
    assert Flag.CLAMPED_THREADS in flags


def test_derive_e_errors():
    with pytest.raises(NoAtomicJobsError):
        derive_e(dump_for([SmCounters(0, 0, 0, 1000, 0.25)], total_ops=0))
    with pytest.raises(MissingTotalOpsError):
        derive_e(dump_for([SmCounters(0, 10, 0, 1000, 0.25)], total_ops=None))


def test_derive_e_permutation_invariant():
    rng = np.random.default_rng(5)
    sms = [
        SmCounters(i, int(rng.integers(0, 100)), int(rng.integers(0, 100)), 1000, 0.5)
        for i in range(4)
    ]
    base = dump_for(sms, total_ops=777)
    e0, _ = derive_e(base)
    for seed in range(5):
        order = list(range(4))
        rng2 = np.random.default_rng(seed)
        rng2.shuffle(order)
        e1, _ = derive_e(dump_for([sms[i] for i in order], total_ops=777))
        assert e1 == e0


# --- derive_sm -----------------------------------------------------------------


def test_parallelism_from_occupancy(volta_table):
    sm = SmCounters(0, 100, 0, 100000, 0.25)
    row = derive_sm(sm, 32.0, TITAN_V, volta_table)
    assert row.avg_parallelism == 16.0


def test_no_jobs_means_zero_utilization(mini_table):
    sm = SmCounters(0, 0, 0, 12345, 0.9)
    row = derive_sm(sm, 16.0, MINI, mini_table)
    assert row.utilization == 0.0
    assert row.busy_cycles == 0.0
    assert row.service_time_cycles is None
    assert row.avg_queued_cas == 0.0


def test_zero_load_with_jobs_is_inconsistent(mini_table):
    sm = SmCounters(0, 10, 0, 1000, 0.0)
    with pytest.raises(ZeroLoadError):
        derive_sm(sm, 16.0, MINI, mini_table)


def test_busy_identity_and_utilization_law(mini_table):
    rng = np.random.default_rng(6)
    for _ in range(200):
        fao = int(rng.integers(0, 5000))
        cas = int(rng.integers(0, 5000))
        cycles = int(rng.integers(1, 10**7))
        occ = float(rng.uniform(0.01, 1.0))
        e = float(rng.uniform(1.0, 32.0))
        row = derive_sm(SmCounters(0, fao, cas, cycles, occ), e, MINI, mini_table)
        if row.total_jobs:
            assert row.busy_cycles == row.total_jobs * row.service_time_cycles
        assert row.utilization * row.active_cycles == pytest.approx(
            row.busy_cycles, rel=1e-12
        )
        assert row.avg_queued_cas <= row.avg_parallelism


def test_cas_ratio_matches_counters(mini_table):
    rng = np.random.default_rng(7)
    for _ in range(200):
        fao = int(rng.integers(0, 1000))
        cas = int(rng.integers(0, 1000))
        if fao + cas == 0:
            continue
        occ = float(rng.uniform(0.05, 1.0))
        row = derive_sm(SmCounters(0, fao, cas, 10**6, occ), 8.0, MINI, mini_table)
        want = cas / (fao + cas)
        got = row.avg_queued_cas / row.avg_parallelism
        # two float roundings separate the two routes
        assert got == pytest.approx(want, rel=1e-14, abs=1e-15)


def test_cas_ratio_exact_at_dyadic_occupancy(mini_table):
    row = derive_sm(SmCounters(0, 12, 4, 10**6, 0.25), 8.0, MINI, mini_table)
    assert row.avg_queued_cas / row.avg_parallelism == 4 / 16


def test_scaling_property(mini_table):
    # doubling both instruction counts and kernel time leaves U unchanged
    base = SmCounters(0, 300, 100, 10**5, 0.5)
    doubled = SmCounters(0, 600, 200, 2 * 10**5, 0.5)
    r1 = derive_sm(base, 8.0, MINI, mini_table)
    r2 = derive_sm(doubled, 8.0, MINI, mini_table)
    assert r1.utilization == r2.utilization


def test_over100_flag(mini_table):
    # tiny kernel time forces U > 1; value reported raw
    busy_heavy = SmCounters(0, 1000, 0, 10, 1.0)
    row = derive_sm(busy_heavy, 32.0, MINI, mini_table)
    assert row.utilization > 1.0
    assert Flag.OVER100 in row.flags


def test_clamped_load_flag(mini_table):
    # mismatched GPU: more resident warps than the table's grid covers
    big = GpuSpec("big", warps_per_sm=32, sm_count=4)
    row = derive_sm(SmCounters(0, 100, 0, 10**6, 1.0), 8.0, big, mini_table)
    assert Flag.CLAMPED_LOAD in row.flags
    assert row.service_time_cycles == mini_table.service_time(8.0, 8.0, 0.0)


# --- derive_all ------------------------------------------------------------------


def test_identical_sms_identical_utilization(mini_table):
    sms = [SmCounters(i, 50, 10, 10**5, 0.5) for i in range(4)]
    rows, summary = derive_all(dump_for(sms, total_ops=4 * 60 * 8), mini_table)
    assert len(rows) == 4
    assert len({r.utilization for r in rows}) == 1
    assert summary.u_min == summary.u_median == summary.u_max


def test_heaviest_sm_has_max_utilization(mini_table):
    sms = [SmCounters(i, 50, 10, 10**5, 0.5) for i in range(3)]
    sms.append(SmCounters(3, 500, 100, 10**5, 0.5))
    rows, summary = derive_all(dump_for(sms, total_ops=8 * (3 * 60 + 600)), mini_table)
    by_sm = {r.sm_index: r for r in rows}
    # fixed occupancy and mix: B = N*S with identical S, so 10x jobs wins
    assert by_sm[3].utilization == max(r.utilization for r in rows)
    assert by_sm[3].utilization > by_sm[0].utilization
    assert summary.u_max == by_sm[3].utilization
    # independent recomputation of each row
    for r in rows:
        sm = next(s for s in sms if s.sm_index == r.sm_index)
        n_hat = sm.achieved_occupancy * MINI.warps_per_sm
        c = n_hat * sm.cas_warp_instructions / sm.total_jobs
        s = mini_table.service_time(n_hat, summary.avg_active_threads, c)
        assert r.utilization == sm.total_jobs * s / sm.active_cycles


def test_gpu_mismatch(mini_table):
    other = GpuSpec("other", warps_per_sm=8, sm_count=4)
    dump = dump_for([SmCounters(0, 10, 0, 1000, 0.5)], total_ops=80, gpu=other)
    with pytest.raises(GpuMismatchError):
        derive_all(dump, mini_table)
    rows, _ = derive_all(dump, mini_table, allow_gpu_mismatch=True)
    assert rows


def test_assume_e(mini_table):
    dump = dump_for([SmCounters(0, 10, 0, 1000, 0.5)], total_ops=None)
    with pytest.raises(MissingTotalOpsError):
        derive_all(dump, mini_table)
    rows, summary = derive_all(dump, mini_table, assume_e=16.0)
    assert summary.e_assumed
    assert summary.avg_active_threads == 16.0
    assert Flag.ASSUMED_THREADS in summary.flags
    assert all(Flag.ASSUMED_THREADS in r.flags for r in rows)
    with pytest.raises(ValueError):
        derive_all(dump, mini_table, assume_e=64.0)


def test_no_atomics_verdict(mini_table):
    sms = [SmCounters(i, 0, 0, 1000, 0.25) for i in range(2)]
    rows, summary = derive_all(dump_for(sms, total_ops=0), mini_table)
    assert summary.verdict == VERDICT_NO_ATOMICS
    assert summary.avg_active_threads is None
    assert all(r.utilization == 0.0 for r in rows)


def test_popc_caveat_flag(mini_table, mini_gpu):
    from atomql.tables import ParamTable

    dump = dump_for([SmCounters(0, 10, 0, 10**6, 0.5)], total_ops=80)
    _, summary = derive_all(dump, mini_table, popc_as_fao=True)
    assert Flag.POPC_AS_FAO in summary.flags
    popc_table = ParamTable(mini_gpu, mini_table.samples, popc_calibrated=True)
    _, summary = derive_all(dump, popc_table, popc_as_fao=True)
    assert Flag.POPC_AS_FAO not in summary.flags


def test_verdict_thresholds():
    assert verdict_for(0.95) == VERDICT_ATOMIC_BOUND
    assert verdict_for(0.9) == VERDICT_ATOMIC_BOUND
    assert verdict_for(0.7) == VERDICT_SIGNIFICANT
    assert verdict_for(0.5) == VERDICT_SIGNIFICANT
    assert verdict_for(0.49) == VERDICT_NOT_BOTTLENECK
    assert verdict_for(0.0) == VERDICT_NOT_BOTTLENECK


def test_summary_statistics(mini_table):
    sms = [
        SmCounters(0, 10, 0, 10**5, 0.5),
        SmCounters(1, 100, 0, 10**5, 0.5),
        SmCounters(2, 1000, 0, 10**5, 0.5),
    ]
    rows, summary = derive_all(dump_for(sms, total_ops=8 * 1110), mini_table)
    utils = sorted(r.utilization for r in rows)
    assert summary.u_min == utils[0]
    assert summary.u_median == utils[1]
    assert summary.u_max == utils[2]
