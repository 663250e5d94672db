"""Lookup throughput microbenchmark: dense tables vs ROBE-Z at several block sizes.

Every variant serves the same query stream. ROBE timings include hash
evaluation, as a real lookup would. Numbers are machine-specific and only
the ratios between variants are meaningful.
"""

from __future__ import annotations

import time

import numpy as np

from ..robe import RobeArray, TableSpec, make_plan

BATCH = 4096


def _query_stream(n_tables, vocab_size, n_queries, seed):
    rng = np.random.default_rng(seed)
    tables = rng.integers(0, n_tables, n_queries)
    tokens = rng.integers(0, vocab_size, n_queries)
    return tables, tokens


def _time_best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _grouped(tables, tokens, n_tables):
    """Query batches split by table id, fixed before timing starts."""
    out = []
    for lo in range(0, tables.size, BATCH):
        t, x = tables[lo:lo + BATCH], tokens[lo:lo + BATCH]
        out.append([(e, x[t == e]) for e in range(n_tables)])
    return out


def bench_lookup_throughput(
    d: int = 16,
    m: int = 1 << 16,
    z_values=(1, None),
    n_queries: int = 200_000,
    seed: int = 0,
    vocab_size: int = 100_000,
    n_tables: int = 4,
    repeats: int = 3,
    hash_only: bool = False,
) -> dict:
    """Lookups per second for a dense table and ROBE arrays with each ``z``.

    ``None`` in ``z_values`` stands for ``z = d``. With ``hash_only`` the
    ROBE variants compute slots but skip the weight gather, which isolates
    the hashing overhead.
    """
    z_values = [d if z is None else int(z) for z in z_values]
    tables, tokens = _query_stream(n_tables, vocab_size, n_queries, seed)
    batches = _grouped(tables, tokens, n_tables)
    specs = [TableSpec(e, vocab_size, d) for e in range(n_tables)]
    results = {}

    dense = np.random.default_rng(seed).standard_normal((n_tables * vocab_size, d))

    def run_full():
        for batch in batches:
            for e, x in batch:
                dense[e * vocab_size + x].sum()

    results["full"] = n_queries / _time_best(run_full, repeats)

    for z in z_values:
        plan = make_plan(m, z, specs, seed=seed)
        array = RobeArray.initialize(plan, seed)
        w = array.weights

        def run_robe(plan=plan, w=w):
            for batch in batches:
                for e, x in batch:
                    slots = plan.slot_matrix(e, x)
                    if not hash_only:
                        w[slots].sum()

        results[f"robe_z{z}"] = n_queries / _time_best(run_robe, repeats)

    base = results.get("robe_z1")
    ratios = {k: v / results["full"] for k, v in results.items()}
    report = {
        "d": d,
        "m": m,
        "z_values": z_values,
        "queries": n_queries,
        "seed": seed,
        "hash_only": hash_only,
        "lookups_per_second": results,
        "ratio_vs_full": ratios,
    }
    if base:
        report["ratio_vs_z1"] = {k: v / base for k, v in results.items()}
    return report
