"""Walkthrough: utilization vs. problem size.

Sweeps the per-SM job count over five decades for two access patterns: all
32 threads hitting one location per warp-instruction vs. ~3 on average.
The high-contention curve saturates the atomic unit; the scattered one
never does. Emits the same CSV the `atomql sweep` subcommand produces.

Run:  python3 demos/load_sweep.py
"""

from atomql import Scenario, TITAN_V, synthesize_table
from atomql.cli import run_sweep, sweep_csv

table = synthesize_table(TITAN_V)

loads = [float(v) for v in (100, 1_000, 10_000, 100_000, 1_000_000)]
curves = {}
for threads in (32, 3):
    template = Scenario(
        jobs_per_sm=100,
        active_threads=threads,
        cas_fraction=0.0,
        occupancy=0.25,
        overhead_cycles=50_000.0,  # fixed non-atomic work per kernel
        sm_count=4,
    )
    points = run_sweep(table, template, "jobs_per_sm", loads)
    curves[threads] = points

print("median utilization vs jobs per SM (occupancy 0.25):")
print(f"{'jobs/SM':>10} {'e=32':>8} {'e=3':>8}")
for p32, p3 in zip(curves[32], curves[3]):
    print(
        f"{int(p32['value']):>10} {p32['median_utilization']:>8.3f} "
        f"{p3['median_utilization']:>8.3f}"
    )

print("\nCSV as emitted by `atomql sweep` (e=32 curve):")
print(sweep_csv(curves[32]))
