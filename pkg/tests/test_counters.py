"""Counter ingestion tests: canonical JSON, NVProf/NCU adapters, merge, fuzz."""

import json
import random

import pytest

from atomql import (
    CounterDump,
    GpuSpec,
    SmCounters,
    merge,
    parse_canonical,
    parse_ncu_csv,
    parse_nvprof_csv,
    write_canonical,
)
from atomql.counters import AggregateCounters, dump_from_dict, dump_to_dict
from atomql.errors import (
    AtomqlError,
    KernelMismatchError,
    MetricConflictError,
    MissingMetricError,
    ParseError,
)

GPU = GpuSpec("testgpu", warps_per_sm=16, sm_count=8)


def make_dump(per_sm=None, total_ops=320, kernel="k"):
    if per_sm is None:
        per_sm = [
            SmCounters(0, 10, 0, 1000, 0.25),
            SmCounters(1, 6, 2, 1000, 0.5),
        ]
    return CounterDump(kernel, GPU, total_ops, tuple(per_sm))


def nvprof_long_csv(dump, shuffle_seed=None, kernel_col=True, drop_metric=None):
    """Render a dump as a long-format NVProf-style CSV (test fixture only)."""
    rows = []
    for sm in dump.per_sm:
        metrics = {
            "tesla_shared_atom": sm.fao_warp_instructions,
            "tesla_shared_atom_cas": sm.cas_warp_instructions,
            "tesla_active_cycles": sm.active_cycles,
            "tesla_achieved_occupancy": sm.achieved_occupancy,
        }
        for name, value in metrics.items():
            if drop_metric and name.endswith(drop_metric):
                continue
            rows.append((sm.sm_index, name, value))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(rows)
    header = "sm,metric,value" + (",kernel" if kernel_col else "")
    lines = [header]
    for sm, name, value in rows:
        line = f"{sm},{name},{value}"
        if kernel_col:
            line += f",{dump.kernel_name}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def nvprof_wide_csv(dump):
    lines = ["sm,dev0_shared_atom,dev0_shared_atom_cas,active_cycles,achieved_occupancy"]
    for sm in dump.per_sm:
        lines.append(
            f"{sm.sm_index},{sm.fao_warp_instructions},{sm.cas_warp_instructions},"
            f"{sm.active_cycles},{sm.achieved_occupancy}"
        )
    return "\n".join(lines) + "\n"


def ncu_csv(total_ops, kernel="k", extra_aggregations=True, conflict=False):
    metric = "smsp__l1tex_data_pipe_lsu_wavefronts_mem_shared_op_atom"
    lines = ['"Kernel Name","Metric Name","Metric Value"']
    lines.append(f'"{kernel}","{metric}.sum","{total_ops:,}"')
    if extra_aggregations:
        lines.append(f'"{kernel}","{metric}.avg","{max(total_ops // 8, 1)}"')
        lines.append(f'"{kernel}","{metric}.min","0"')
        lines.append(f'"{kernel}","{metric}.max","{total_ops}"')
    if conflict:
        lines.append(f'"{kernel}","{metric}.sum","{total_ops + 1}"')
    return "\n".join(lines) + "\n"


# --- canonical JSON ---------------------------------------------------------------


def test_minimal_canonical_dump(tmp_path):
    path = tmp_path / "d.json"
    path.write_text(
        json.dumps(
            {
                "kernel_name": "hist",
                "gpu": {"name": "testgpu", "warps_per_sm": 16, "sm_count": 8},
                "total_atomic_ops": 320,
                "per_sm": [
                    {"sm": 0, "fao": 10, "cas": 0, "active_cycles": 1000,
                     "achieved_occupancy": 0.25}
                ],
            }
        )
    )
    dump = parse_canonical(path)
    assert dump.kernel_name == "hist"
    assert dump.total_atomic_ops == 320
    assert len(dump.per_sm) == 1
    assert dump.per_sm[0] == SmCounters(0, 10, 0, 1000, 0.25)


def test_occupancy_out_of_bounds_names_field(tmp_path):
    data = dump_to_dict(make_dump())
    data["per_sm"][1]["achieved_occupancy"] = 1.3
    path = tmp_path / "d.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ParseError, match="achieved_occupancy"):
        parse_canonical(path)


def test_unknown_fields_ignored(tmp_path):
    data = dump_to_dict(make_dump())
    data["comment"] = "extra"
    data["per_sm"][0]["unused_counter"] = 7
    path = tmp_path / "d.json"
    path.write_text(json.dumps(data))
    assert parse_canonical(path) == make_dump()


def test_write_parse_round_trip(tmp_path):
    dump = make_dump()
    path = tmp_path / "d.json"
    write_canonical(dump, path)
    assert parse_canonical(path) == dump


def test_missing_field_has_path():
    data = dump_to_dict(make_dump())
    del data["per_sm"][0]["active_cycles"]
    with pytest.raises(ParseError, match=r"per_sm\[0\].active_cycles"):
        dump_from_dict(data)


def test_null_total_ops_allowed(tmp_path):
    data = dump_to_dict(make_dump(total_ops=None))
    path = tmp_path / "d.json"
    path.write_text(json.dumps(data))
    assert parse_canonical(path).total_atomic_ops is None


def test_duplicate_sm_rejected():
    with pytest.raises(ParseError, match="duplicate"):
        make_dump(per_sm=[SmCounters(0, 1, 0, 10, 0.5), SmCounters(0, 2, 0, 10, 0.5)])


def test_sm_index_range_enforced():
    with pytest.raises(ParseError, match="out of range"):
        make_dump(per_sm=[SmCounters(8, 1, 0, 10, 0.5)])


# --- NVProf adapter ----------------------------------------------------------------


def test_nvprof_long_format(tmp_path):
    dump = make_dump()
    path = tmp_path / "p.csv"
    path.write_text(nvprof_long_csv(dump))
    parsed = parse_nvprof_csv(path, GPU)
    assert parsed.total_atomic_ops is None
    assert parsed.per_sm == dump.per_sm
    assert parsed.kernel_name == "k"


def test_nvprof_wide_format(tmp_path):
    dump = make_dump()
    path = tmp_path / "p.csv"
    path.write_text(nvprof_wide_csv(dump))
    parsed = parse_nvprof_csv(path, GPU, kernel_name="k")
    assert parsed.per_sm == dump.per_sm


def test_nvprof_row_order_independent(tmp_path):
    dump = make_dump()
    sorted_path = tmp_path / "sorted.csv"
    sorted_path.write_text(nvprof_long_csv(dump))
    want = parse_nvprof_csv(sorted_path, GPU)
    for seed in range(5):
        shuffled = tmp_path / f"shuf{seed}.csv"
        shuffled.write_text(nvprof_long_csv(dump, shuffle_seed=seed))
        assert parse_nvprof_csv(shuffled, GPU) == want


def test_nvprof_missing_metric(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text(nvprof_long_csv(make_dump(), drop_metric="shared_atom_cas"))
    with pytest.raises(MissingMetricError, match="shared_atom_cas"):
        parse_nvprof_csv(path, GPU)


def test_nvprof_malformed_numeric(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("sm,metric,value\n0,shared_atom,ten\n")
    with pytest.raises(ParseError, match="malformed numeric"):
        parse_nvprof_csv(path, GPU)


def test_nvprof_occupancy_bounds(tmp_path):
    bad = make_dump()
    text = nvprof_long_csv(bad).replace("0.25", "1.25")
    path = tmp_path / "p.csv"
    path.write_text(text)
    with pytest.raises(ParseError, match="achieved_occupancy"):
        parse_nvprof_csv(path, GPU)


def test_nvprof_profiler_banner_skipped(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("==PROF== Connected to process 1\n" + nvprof_long_csv(make_dump()))
    assert parse_nvprof_csv(path, GPU).per_sm == make_dump().per_sm


# --- NCU adapter --------------------------------------------------------------------


def test_ncu_reads_sum(tmp_path):
    path = tmp_path / "n.csv"
    path.write_text(ncu_csv(4096, extra_aggregations=False))
    agg = parse_ncu_csv(path)
    assert agg.total_atomic_ops == 4096
    assert agg.kernel_name == "k"


def test_ncu_only_sum_consumed(tmp_path):
    # file lists sum/avg/min/max; only .sum must be used
    path = tmp_path / "n.csv"
    path.write_text(ncu_csv(4096, extra_aggregations=True))
    assert parse_ncu_csv(path).total_atomic_ops == 4096


def test_ncu_missing_metric(tmp_path):
    path = tmp_path / "n.csv"
    path.write_text('"Metric Name","Metric Value"\n"other_metric.sum","5"\n')
    with pytest.raises(MissingMetricError):
        parse_ncu_csv(path)


def test_ncu_conflicting_rows(tmp_path):
    path = tmp_path / "n.csv"
    path.write_text(ncu_csv(4096, conflict=True))
    with pytest.raises(MetricConflictError):
        parse_ncu_csv(path)


# --- merge ---------------------------------------------------------------------------


def test_merge_fills_total_only():
    dump = make_dump(total_ops=None)
    merged = merge(dump, AggregateCounters(total_atomic_ops=512, kernel_name="k"))
    assert merged.total_atomic_ops == 512
    assert merged.per_sm == dump.per_sm
    assert merged.kernel_name == dump.kernel_name


def test_merge_kernel_mismatch():
    dump = make_dump(total_ops=None)
    with pytest.raises(KernelMismatchError):
        merge(dump, AggregateCounters(total_atomic_ops=512, kernel_name="other"))


def test_merge_without_names_is_lenient():
    dump = make_dump(total_ops=None)
    merged = merge(dump, AggregateCounters(total_atomic_ops=64))
    assert merged.total_atomic_ops == 64


def test_merged_exports_recover_generator_threads(tmp_path):
    """e derived from merged nvprof+ncu views equals the generator's setting."""
    from atomql import Scenario, derive_e, generate_dump, synthesize_table

    table = synthesize_table(GPU)
    scenario = Scenario(
        jobs_per_sm=96, active_threads=13, cas_fraction=0.25, occupancy=0.5,
        target_utilization=0.5, sm_count=4,
    )
    dump = generate_dump(scenario, table)

    nvprof = tmp_path / "p.csv"
    nvprof.write_text(nvprof_long_csv(dump))
    ncu = tmp_path / "n.csv"
    ncu.write_text(ncu_csv(dump.total_atomic_ops, kernel=dump.kernel_name))
    merged = merge(parse_nvprof_csv(nvprof, GPU), parse_ncu_csv(ncu))
    e, flags = derive_e(merged)
    assert e == 13.0
    assert not flags


def test_three_way_merge_equality(tmp_path):
    """nvprof + ncu of one launch must equal parse_canonical of the combined file."""
    dump = make_dump(total_ops=4242)

    canonical = tmp_path / "combined.json"
    write_canonical(dump, canonical)

    nvprof = tmp_path / "p.csv"
    nvprof.write_text(nvprof_long_csv(dump))
    ncu = tmp_path / "n.csv"
    ncu.write_text(ncu_csv(4242))

    merged = merge(parse_nvprof_csv(nvprof, GPU), parse_ncu_csv(ncu))
    assert merged == parse_canonical(canonical)


# --- fuzz -------------------------------------------------------------------------


def _fuzz_files(tmp_path, rng):
    texts = []
    alphabet = 'abc,"\n0123456789.{}[]:=#- '
    for k in range(60):
        length = int(rng.integers(0, 400))
        texts.append("".join(rng.choice(list(alphabet)) for _ in range(length)))
    # structured-ish JSON mutations
    base = dump_to_dict(make_dump())
    for k in range(40):
        data = json.loads(json.dumps(base))
        kind = int(rng.integers(0, 5))
        if kind == 0:
            data["per_sm"][0]["achieved_occupancy"] = float(rng.uniform(-2, 3))
        elif kind == 1:
            data["per_sm"][0]["fao"] = int(rng.integers(-10, 10))
        elif kind == 2:
            data["total_atomic_ops"] = rng.choice([None, -1, "many", 3.5])
        elif kind == 3:
            data["per_sm"].append(dict(data["per_sm"][0]))
        else:
            del data[rng.choice(list(data.keys()))]
        texts.append(json.dumps(data, default=str))
    paths = []
    for k, text in enumerate(texts):
        path = tmp_path / f"fuzz{k}"
        path.write_text(text)
        paths.append(path)
    return paths


def test_parsers_never_crash_on_fuzz(tmp_path):
    import numpy as np

    rng = np.random.default_rng(99)
    for path in _fuzz_files(tmp_path, rng):
        for parser in (
            lambda p: parse_canonical(p),
            lambda p: parse_nvprof_csv(p, GPU),
            lambda p: parse_ncu_csv(p),
        ):
            try:
                result = parser(path)
            except AtomqlError:
                continue
            # anything accepted must satisfy the construction invariants
            if isinstance(result, CounterDump):
                assert all(0.0 <= sm.achieved_occupancy <= 1.0 for sm in result.per_sm)
                assert all(sm.active_cycles >= 1 for sm in result.per_sm)
                assert len({sm.sm_index for sm in result.per_sm}) == len(result.per_sm)
            else:
                assert result.total_atomic_ops >= 0
