"""Walkthrough: service-time tables.

Builds a synthetic calibration table for a Volta-shaped GPU, persists it,
and pokes at the interpolated lookup surface.

Run:  python3 demos/calibration_tables.py
"""

import tempfile
from pathlib import Path

from atomql import TITAN_V, load_table, save_table, synthesize_table

# One table per GPU model. On real hardware the drain times come from a
# microbenchmark sweep; here we synthesize a family with the same trends.
table = synthesize_table(TITAN_V)
print(f"table for {table.gpu.name}: load 1..{table.n_max}, threads 1..32, cas 0..load")
print(f"metadata: {table.metadata}")

# Stored samples are exact at grid points.
print("\ndrain time of a 16-wide batch, all 32 threads active, no CAS:")
print(f"  total_time(16, 32, 0) = {table.total_time(16, 32, 0):.1f} cycles")
print(f"  service_time(16, 32, 0) = {table.service_time(16, 32, 0):.3f} cycles/job")

# Counter-derived model inputs are rarely integral; lookups interpolate.
print("\nnon-integral lookup (occupancy-derived load 13.44, 7.2 threads):")
print(f"  service_time(13.44, 7.2, 3.1) = {table.service_time(13.44, 7.2, 3.1):.3f}")

# The three qualitative trends carried by the data:
print("\ntrends (service time per job):")
for n in (1, 4, 16, 64):
    s = table.service_time(n, 32, 0)
    print(f"  load {n:>2}: {s:8.2f}   (more parallelism, cheaper jobs)")
for e in (1, 8, 32):
    s = table.service_time(16, e, 0)
    print(f"  threads {e:>2}: {s:6.2f}   (more active threads, pricier jobs)")
for c in (0, 8, 16):
    s = table.service_time(16, 32, c)
    print(f"  cas {c:>2}: {s:10.2f}   (more CAS in the mix, pricier jobs)")

# Bit-exact persistence.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "titan-v.csv"
    save_table(table, path)
    reloaded = load_table(path)
    print(f"\nround trip through {path.name}: identical = {reloaded == table}")
