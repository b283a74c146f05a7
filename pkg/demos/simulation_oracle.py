"""Walkthrough: the discrete-event simulator as an oracle.

The simulator implements the same queue the analysis assumes, so it can
check the analysis from the outside: closed batches reproduce the
calibration identity, and open-arrival runs obey the utilization law.

Run:  python3 demos/simulation_oracle.py
"""

import numpy as np

from atomql import (
    TITAN_V,
    closed_batch,
    constant_service,
    poisson_jobs,
    service_from_table,
    simulate,
    synthesize_table,
)

table = synthesize_table(TITAN_V)
service = service_from_table(table)

# 1. The calibration identity: a batch of n simultaneous jobs drains in
#    exactly n * S(n, e, c), which is how the tables are measured.
print("closed-batch calibration identity:")
for n in (1, 16, 64):
    trace = simulate(closed_batch(n, cas_count=n // 2, active_threads=32), service)
    recovered = trace.total_time / n
    expected = table.service_time(n, 32, n // 2)
    print(
        f"  n={n:>2}: drain/{n} = {recovered:10.4f}   "
        f"table S = {expected:10.4f}   match = {abs(recovered - expected) < 1e-9}"
    )

# 2. Job flow balance: every arrival completes on a drained run.
jobs = poisson_jobs(5000, rate=0.005, rng=np.random.default_rng(0), active_threads=8)
trace = simulate(jobs, service)
print(f"\njob flow balance: arrivals {len(jobs)}, completions {trace.completions}")

# 3. Utilization law U = X * S on a constant-service open-arrival run.
s = 120.0
jobs = poisson_jobs(50_000, rate=0.006, rng=np.random.default_rng(1))
trace = simulate(jobs, constant_service(s))
throughput = trace.completions / trace.total_time
utilization = trace.busy_cycles / trace.total_time
print("\nutilization law on 50k Poisson arrivals:")
print(f"  measured U           = {utilization:.5f}")
print(f"  throughput * service = {throughput * s:.5f}")
print(f"  offered load rate*S  = {0.006 * s:.5f}")
