"""Walkthrough: from performance counters to a utilization verdict.

Mirrors the profiling workflow: per-SM counters plus the across-SM atomic
operation total, combined with the calibrated table, give per-SM busy time
and utilization of the shared-memory atomic unit.

Run:  python3 demos/counter_analysis.py
"""

from atomql import CounterDump, SmCounters, TITAN_V, derive_all, synthesize_table
from atomql.cli import render_text

table = synthesize_table(TITAN_V)

# A kernel that hammers one histogram bin: every thread of every
# warp-instruction lands on the same location, so the thread-level total is
# 32x the warp-instruction count.
hot_bin = CounterDump(
    kernel_name="histogram-solid",
    gpu=TITAN_V,
    total_atomic_ops=32 * 80 * 40_000,
    per_sm=tuple(
        SmCounters(
            sm_index=i,
            fao_warp_instructions=40_000,
            cas_warp_instructions=0,
            active_cycles=3_500_000,
            achieved_occupancy=0.25,
        )
        for i in range(80)
    ),
)

# The same instruction counts, but accesses scattered across bins: only ~3
# threads per warp-instruction share a location.
scattered = CounterDump(
    kernel_name="histogram-random",
    gpu=TITAN_V,
    total_atomic_ops=3 * 80 * 40_000,
    per_sm=hot_bin.per_sm,
)

for dump in (hot_bin, scattered):
    rows, summary = derive_all(dump, table)
    print(f"== {dump.kernel_name}")
    print(f"   avg active threads/job: {summary.avg_active_threads:.1f}")
    print(f"   median utilization:     {summary.u_median:.1%}")
    print(f"   verdict:                {summary.verdict}")
    print()

# The full text report for the hot-bin kernel (first SMs shown):
rows, summary = derive_all(hot_bin, table)
report = render_text(rows[:4], summary)
print("\n".join(report.splitlines()[:12]))
print("  ... (76 more SMs)")
