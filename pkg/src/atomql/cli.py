"""Command-line front end.

Two-tool workflow: ``calibrate`` produces (or validates) a service-time
table once per GPU model, ``analyze`` combines that table with profiler
counter exports to report per-SM utilization of the shared-memory atomic
unit. ``simulate``, ``sweep`` and ``export`` expose the built-in queue
simulator for oracle runs, load sweeps and synthetic counter dumps.

Exit codes: 0 success, 1 input error, 3 analysis flagged utilization above
100% (a machine-detectable anomaly).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .counters import (
    CounterDump,
    merge,
    parse_canonical,
    parse_ncu_csv,
    parse_nvprof_csv,
    write_canonical,
)
from .derive import (
    ATOMIC_BOUND_THRESHOLD,
    SIGNIFICANT_THRESHOLD,
    DerivedQuantities,
    Flag,
    KernelSummary,
    derive_all,
)
from .errors import AtomqlError, InfeasibleScenarioError, MissingCellError
from .sim import (
    Scenario,
    SyntheticFamily,
    constant_service,
    generate_dump,
    load_scenario,
    service_from_table,
    simulate_scenario,
    synthesize_table,
)
from .tables import (
    ParamTable,
    grid_cell_count,
    gpu_preset,
    load_table,
    missing_cells,
    save_table,
    table_from_rows,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_OVER100 = 3

SCHEMA_VERSION = 1

_CAVEAT_TEXT = {
    Flag.OVER100: (
        "estimated utilization exceeds 100% on at least one SM; the load is "
        "approximated from occupancy and may be an overestimate"
    ),
    Flag.CLAMPED_LOAD: (
        "lookup load or queued-CAS coordinates were clamped into the table "
        "domain (noisy counters)"
    ),
    Flag.CLAMPED_THREADS: (
        "average active threads per job fell outside [1, 32] and was clamped"
    ),
    Flag.ASSUMED_THREADS: (
        "active threads per job were NOT measured; the value was assumed via "
        "--assume-e and utilization scales with it"
    ),
    Flag.POPC_AS_FAO: (
        "population-count increment instructions were costed as fetch-and-op; "
        "the table is not POPC-calibrated"
    ),
}


# --- report rendering ---------------------------------------------------------


def caveats_for(flags: frozenset[Flag]) -> list[str]:
    return [_CAVEAT_TEXT[f] for f in Flag if f in flags]


def report_dict(rows: list[DerivedQuantities], summary: KernelSummary) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kernel_name": summary.kernel_name,
        "gpu": {
            "name": summary.gpu.name,
            "warps_per_sm": summary.gpu.warps_per_sm,
            "sm_count": summary.gpu.sm_count,
        },
        "avg_active_threads": summary.avg_active_threads,
        "e_assumed": summary.e_assumed,
        "utilization": {
            "min": summary.u_min,
            "median": summary.u_median,
            "max": summary.u_max,
        },
        "verdict": summary.verdict,
        "caveats": caveats_for(summary.flags),
        "per_sm": [
            {
                "sm": r.sm_index,
                "total_jobs": r.total_jobs,
                "avg_parallelism": r.avg_parallelism,
                "avg_active_threads": r.avg_active_threads,
                "avg_queued_cas": r.avg_queued_cas,
                "service_time_cycles": r.service_time_cycles,
                "busy_cycles": r.busy_cycles,
                "active_cycles": r.active_cycles,
                "utilization": r.utilization,
                "flags": sorted(f.value for f in r.flags),
            }
            for r in rows
        ],
    }


def render_json(rows: list[DerivedQuantities], summary: KernelSummary) -> str:
    return json.dumps(report_dict(rows, summary), indent=2) + "\n"


_CSV_COLUMNS = (
    "sm",
    "total_jobs",
    "avg_parallelism",
    "avg_active_threads",
    "avg_queued_cas",
    "service_time_cycles",
    "busy_cycles",
    "active_cycles",
    "utilization",
    "flags",
)


def render_csv(rows: list[DerivedQuantities], summary: KernelSummary) -> str:
    lines = [",".join(_CSV_COLUMNS)]
    for r in rows:
        svc = "" if r.service_time_cycles is None else repr(r.service_time_cycles)
        lines.append(
            ",".join(
                [
                    str(r.sm_index),
                    str(r.total_jobs),
                    repr(r.avg_parallelism),
                    repr(r.avg_active_threads),
                    repr(r.avg_queued_cas),
                    svc,
                    repr(r.busy_cycles),
                    str(r.active_cycles),
                    repr(r.utilization),
                    ";".join(sorted(f.value for f in r.flags)),
                ]
            )
        )
    e = "" if summary.avg_active_threads is None else repr(summary.avg_active_threads)
    lines.append(f"# kernel_name={summary.kernel_name}")
    lines.append(f"# gpu={summary.gpu.name}")
    lines.append(f"# avg_active_threads={e}")
    lines.append(f"# u_min={summary.u_min!r}")
    lines.append(f"# u_median={summary.u_median!r}")
    lines.append(f"# u_max={summary.u_max!r}")
    lines.append(f"# verdict={summary.verdict}")
    return "\n".join(lines) + "\n"


def _bar(utilization: float, width: int = 10) -> str:
    filled = int(round(min(max(utilization, 0.0), 1.0) * width))
    return "[" + "#" * filled + "." * (width - filled) + "]"


def render_text(rows: list[DerivedQuantities], summary: KernelSummary) -> str:
    gpu = summary.gpu
    out = [
        f"kernel: {summary.kernel_name}",
        f"gpu: {gpu.name} ({gpu.sm_count} SMs, {gpu.warps_per_sm} warps/SM)",
    ]
    if summary.avg_active_threads is None:
        out.append("avg active threads/job: n/a (no atomics)")
    else:
        source = "assumed" if summary.e_assumed else "from counters"
        out.append(
            f"avg active threads/job: {summary.avg_active_threads:.10g} ({source})"
        )
    out.append("")
    header = (
        f"{'sm':>4} {'jobs':>10} {'par':>10} {'cas_q':>10} {'svc':>12} "
        f"{'busy':>14} {'cycles':>12} {'util':>12}"
    )
    out.append(header)
    for r in rows:
        svc = "-" if r.service_time_cycles is None else f"{r.service_time_cycles:.10g}"
        out.append(
            f"{r.sm_index:>4} {r.total_jobs:>10} {r.avg_parallelism:>10.10g} "
            f"{r.avg_queued_cas:>10.10g} {svc:>12} {r.busy_cycles:>14.10g} "
            f"{r.active_cycles:>12} {r.utilization:>12.10g} "
            f"{_bar(r.utilization)} {r.utilization * 100:.2f}%"
        )
    out.append("")
    out.append(
        f"utilization across SMs: min {summary.u_min:.10g} / "
        f"median {summary.u_median:.10g} / max {summary.u_max:.10g}"
    )
    out.append(
        f"verdict: {summary.verdict} (heuristic: median U >= "
        f"{ATOMIC_BOUND_THRESHOLD:g} bound, >= {SIGNIFICANT_THRESHOLD:g} significant)"
    )
    caveats = caveats_for(summary.flags)
    if caveats:
        out.append("caveats:")
        out.extend(f"  - {c}" for c in caveats)
    return "\n".join(out) + "\n"


_RENDERERS = {"text": render_text, "json": render_json, "csv": render_csv}


# --- shared argument helpers -----------------------------------------------------


def _family_from_args(args) -> SyntheticFamily:
    return SyntheticFamily(
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        delta=args.delta,
        pipe_width=args.pipe_width,
    )


def _add_family_args(parser: argparse.ArgumentParser) -> None:
    default = SyntheticFamily()
    parser.add_argument("--alpha", type=float, default=default.alpha)
    parser.add_argument("--beta", type=float, default=default.beta)
    parser.add_argument("--gamma", type=float, default=default.gamma)
    parser.add_argument("--delta", type=float, default=default.delta)
    parser.add_argument("--pipe-width", type=int, default=default.pipe_width)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- calibrate ---------------------------------------------------------------


def cmd_calibrate(args) -> int:
    gpu = gpu_preset(args.gpu)
    if args.synthetic:
        table = synthesize_table(gpu, _family_from_args(args))
    else:
        rows = _read_bench_rows(args.bench)
        holes = missing_cells(gpu, rows)
        if holes:
            print(
                f"error: bench data leaves {len(holes)} of "
                f"{grid_cell_count(gpu)} grid cells unpopulated:",
                file=sys.stderr,
            )
            for cell in holes[:20]:
                print(f"  missing (n={cell[0]},e={cell[1]},c={cell[2]})", file=sys.stderr)
            if len(holes) > 20:
                print(f"  ... and {len(holes) - 20} more", file=sys.stderr)
            return EXIT_ERROR
        table = table_from_rows(gpu, rows, metadata=f"bench:{args.bench}")
    save_table(table, args.out)
    valid = ParamTable._valid_mask(table.n_max)
    values = table.samples[valid]
    print(f"wrote {args.out}")
    print(
        f"grid coverage: {values.size}/{grid_cell_count(gpu)} cells "
        f"(n 1..{table.n_max}, e 1..32, c 0..n)"
    )
    print(f"cycle range: {int(values.min())}..{int(values.max())}")
    return EXIT_OK


def _read_bench_rows(path: str) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise AtomqlError(f"cannot read bench file {path}: {exc}") from exc
    rows = []
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ln == 1 and not line[0].isdigit() and not line.startswith("-"):
            continue  # tolerate a column header
        parts = line.split(",")
        if len(parts) != 4:
            raise AtomqlError(f"{path} line {ln}: expected n,e,c,total_cycles")
        try:
            rows.append([int(p) for p in parts])
        except ValueError as exc:
            raise AtomqlError(f"{path} line {ln}: non-integer value") from exc
    return np.asarray(rows, dtype=np.int64).reshape(-1, 4)


# --- analyze ------------------------------------------------------------------


def _load_dump(args, table: ParamTable) -> CounterDump:
    if args.canonical:
        if args.ncu:
            raise AtomqlError("--ncu only applies to --nvprof input")
        return parse_canonical(args.canonical)
    gpu = gpu_preset(args.gpu) if args.gpu else table.gpu
    dump = parse_nvprof_csv(args.nvprof, gpu)
    if args.ncu:
        dump = merge(dump, parse_ncu_csv(args.ncu))
    return dump


def cmd_analyze(args) -> int:
    table = load_table(args.table)
    dump = _load_dump(args, table)
    rows, summary = derive_all(
        dump,
        table,
        assume_e=args.assume_e,
        allow_gpu_mismatch=args.allow_gpu_mismatch,
        popc_as_fao=args.popc,
    )
    _emit(_RENDERERS[args.format](rows, summary), args.out)
    return EXIT_OVER100 if Flag.OVER100 in summary.flags else EXIT_OK


# --- simulate -----------------------------------------------------------------


def _service_from_spec(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "const":
        try:
            return constant_service(float(rest))
        except ValueError as exc:
            raise AtomqlError(f"bad --service spec {spec!r}: {exc}") from exc
    if kind == "family":
        kwargs = {}
        if rest:
            for item in rest.split(","):
                key, sep, value = item.partition("=")
                if not sep:
                    raise AtomqlError(f"bad --service family parameter {item!r}")
                try:
                    kwargs[key.strip()] = (
                        int(value) if key.strip() == "pipe_width" else float(value)
                    )
                except ValueError as exc:
                    raise AtomqlError(f"bad --service value {item!r}") from exc
        try:
            return SyntheticFamily(**kwargs).as_service()
        except TypeError as exc:
            raise AtomqlError(f"bad --service family parameters: {exc}") from exc
    raise AtomqlError(
        f"unknown --service kind {kind!r}; expected const:<cycles> or "
        "family:[k=v,...]"
    )


def _write_trace(run, path: str) -> None:
    trace = run.trace
    lines = ["job,arrival,service_start,completion"]
    for k in range(trace.completions):
        lines.append(
            f"{k},{trace.arrival[k]!r},{trace.service_start[k]!r},"
            f"{trace.completion[k]!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.table:
        table = load_table(args.table)
        service = service_from_table(table)
        gpu = table.gpu
    else:
        service = _service_from_spec(args.service)
        gpu = gpu_preset(args.gpu)
    run = simulate_scenario(scenario, service, gpu, seed=args.seed)
    if args.trace:
        _write_trace(run, args.trace)
        print(f"trace written to {args.trace}")
    trace = run.trace
    u_sim = run.busy_cycles / run.duration_cycles if run.duration_cycles else 0.0
    print(f"seed: {args.seed}")
    print(f"jobs completed (C): {trace.completions}")
    print(f"makespan (T): {trace.total_time!r} cycles")
    print(f"busy (B): {run.busy_cycles!r} cycles")
    print(f"kernel duration: {run.duration_cycles!r} cycles")
    print(f"simulated utilization: {u_sim!r}")
    return EXIT_OK


# --- sweep --------------------------------------------------------------------

_SWEEP_INT_PARAMS = {"jobs_per_sm", "active_threads", "sm_count"}
_SWEEP_PARAMS = _SWEEP_INT_PARAMS | {
    "cas_fraction",
    "occupancy",
    "duration_cycles",
    "target_utilization",
    "overhead_cycles",
    "arrival_rate",
}


def parse_vary(spec: str) -> tuple[str, list[float]]:
    """Parse a --vary spec: ``param=v1,v2,...`` or ``param=start:stop:count[:log]``."""
    param, sep, rest = spec.partition("=")
    param = param.strip()
    if not sep or not param:
        raise AtomqlError(f"--vary must look like param=values, got {spec!r}")
    if param not in _SWEEP_PARAMS:
        raise AtomqlError(
            f"cannot sweep {param!r}; sweepable: {', '.join(sorted(_SWEEP_PARAMS))}"
        )
    rest = rest.strip()
    if ":" in rest:
        parts = rest.split(":")
        if len(parts) not in (3, 4):
            raise AtomqlError(f"range must be start:stop:count[:log], got {rest!r}")
        try:
            start, stop = float(parts[0]), float(parts[1])
            count = int(parts[2])
        except ValueError as exc:
            raise AtomqlError(f"bad range {rest!r}: {exc}") from exc
        if count < 1:
            raise AtomqlError("range count must be >= 1")
        scale = parts[3] if len(parts) == 4 else "lin"
        if scale == "log":
            if start <= 0 or stop <= 0:
                raise AtomqlError("log range endpoints must be positive")
            values = np.geomspace(start, stop, count)
        elif scale == "lin":
            values = np.linspace(start, stop, count)
        else:
            raise AtomqlError(f"range scale must be log or lin, got {scale!r}")
        out = [float(v) for v in values]
    else:
        try:
            out = [float(v) for v in rest.split(",") if v.strip()]
        except ValueError as exc:
            raise AtomqlError(f"bad value list {rest!r}: {exc}") from exc
    if not out:
        raise AtomqlError(f"--vary produced an empty range from {spec!r}")
    if param in _SWEEP_INT_PARAMS:
        out = [float(int(round(v))) for v in out]
    return param, out


def sweep_point(
    template: Scenario, param: str, value: float, table: ParamTable
) -> dict:
    """Evaluate one sweep point; infeasible scenarios report status instead
    of being dropped."""
    cast = int(value) if param in _SWEEP_INT_PARAMS else value
    point = {"param": param, "value": value}
    try:
        scenario = dataclasses.replace(template, **{param: cast})
        dump = generate_dump(scenario, table)
        rows, summary = derive_all(dump, table)
        point.update(
            status="ok",
            median_utilization=summary.u_median,
            avg_active_threads=summary.avg_active_threads,
            avg_parallelism=rows[0].avg_parallelism if rows else None,
        )
    except InfeasibleScenarioError as exc:
        point.update(
            status="infeasible",
            median_utilization=None,
            avg_active_threads=None,
            avg_parallelism=None,
            detail=str(exc),
        )
    return point


def run_sweep(
    table: ParamTable, template: Scenario, param: str, values: list[float]
) -> list[dict]:
    """Sweep one scenario parameter. Points are independent and evaluated
    concurrently; output order follows the input values."""
    with ThreadPoolExecutor(max_workers=min(8, len(values))) as pool:
        return list(pool.map(lambda v: sweep_point(template, param, v, table), values))


def sweep_csv(points: list[dict]) -> str:
    lines = ["param,value,status,median_utilization,avg_active_threads,avg_parallelism"]
    for p in points:
        cells = [p["param"], repr(p["value"]), p["status"]]
        for key in ("median_utilization", "avg_active_threads", "avg_parallelism"):
            cells.append("" if p.get(key) is None else repr(p[key]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    table = load_table(args.table)
    template = load_scenario(args.scenario)
    param, values = parse_vary(args.vary)
    points = run_sweep(table, template, param, values)
    _emit(sweep_csv(points), args.out)
    return EXIT_OK


# --- export -------------------------------------------------------------------


def cmd_export(args) -> int:
    table = load_table(args.table)
    scenario = load_scenario(args.scenario)
    dump = generate_dump(scenario, table, seed=args.seed)
    write_canonical(dump, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomql",
        description=(
            "Estimate per-SM utilization of the GPU shared-memory atomic unit "
            "from hardware performance counters."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="build or validate a service-time table")
    src = cal.add_mutually_exclusive_group(required=True)
    src.add_argument("--bench", help="CSV of measured n,e,c,total_cycles rows")
    src.add_argument(
        "--synthetic", action="store_true", help="synthesize a closed-form table"
    )
    cal.add_argument("--gpu", required=True, help="GPU preset name (e.g. titan-v)")
    cal.add_argument("--out", required=True, help="table file to write")
    _add_family_args(cal)
    cal.set_defaults(func=cmd_calibrate)

    ana = sub.add_parser("analyze", help="report utilization from counter exports")
    ana.add_argument("--table", required=True, help="service-time table file")
    src = ana.add_mutually_exclusive_group(required=True)
    src.add_argument("--canonical", help="canonical dump JSON")
    src.add_argument("--nvprof", help="NVProf-style per-SM metric CSV")
    ana.add_argument("--ncu", help="NCU-style aggregate metric CSV")
    ana.add_argument(
        "--assume-e",
        type=float,
        default=None,
        help="assumed active threads per job when NCU data is unavailable",
    )
    ana.add_argument("--gpu", help="GPU preset for NVProf input (default: table's)")
    ana.add_argument(
        "--allow-gpu-mismatch",
        action="store_true",
        help="analyze even if dump and table GPUs differ",
    )
    ana.add_argument(
        "--popc",
        action="store_true",
        help="kernel uses POPC increments; cost them on the fetch-and-op axis",
    )
    ana.add_argument("--format", choices=sorted(_RENDERERS), default="text")
    ana.add_argument("--out", help="write the report here instead of stdout")
    ana.set_defaults(func=cmd_analyze)

    simp = sub.add_parser("simulate", help="run the queue simulator on a scenario")
    simp.add_argument("--scenario", required=True, help="scenario JSON file")
    src = simp.add_mutually_exclusive_group(required=True)
    src.add_argument("--table", help="service-time table file")
    src.add_argument(
        "--service", help="closed-form service: const:<cycles> or family:[k=v,...]"
    )
    simp.add_argument("--gpu", default="titan-v", help="GPU preset when no table given")
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--trace", help="write the per-job trace CSV here")
    simp.set_defaults(func=cmd_simulate)

    swp = sub.add_parser("sweep", help="sweep a scenario parameter, emit plot data")
    swp.add_argument("--table", required=True)
    swp.add_argument("--scenario", required=True, help="scenario JSON template")
    swp.add_argument(
        "--vary", required=True, help="param=v1,v2,... or param=start:stop:count[:log]"
    )
    swp.add_argument("--out", help="CSV output path (default stdout)")
    swp.set_defaults(func=cmd_sweep)

    exp = sub.add_parser("export", help="write a synthetic canonical counter dump")
    exp.add_argument("--scenario", required=True)
    exp.add_argument("--table", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--seed", type=int, default=0)
    exp.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingCellError as exc:
        print("error: incomplete grid", file=sys.stderr)
        for cell in exc.cells[:20]:
            print(f"  missing (n={cell[0]},e={cell[1]},c={cell[2]})", file=sys.stderr)
        if len(exc.cells) > 20:
            print(f"  ... and {len(exc.cells) - 20} more", file=sys.stderr)
        return EXIT_ERROR
    except (AtomqlError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
