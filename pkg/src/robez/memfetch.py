"""Cache-line fetch accounting for a single embedding lookup.

``fetch_bound`` gives the worst-case number of distinct cache lines one
lookup touches, per storage scheme:

==========================  ===========  ==================
scheme / regime             condition    max fetches
==========================  ===========  ==================
original (dense table)      B | D        D/B + 1
robe1 (per-element hash)    none         D
robez, Z < B < D            Z | B | D    2 * D/Z
robez, B <= Z < D           B | Z | D    D/B + D/Z
robez, Z >= D               D | Z        D/B + 2
==========================  ===========  ==================

The slack terms count straddled line boundaries: a run of ``k*B`` elements
that does not start on a line boundary touches ``k + 1`` lines. A dense row
is one such run (``+1``). A ROBE block of ``Z >= D`` holds the whole
embedding, but the circular array may split it into a tail run and a head
run, each of which can straddle (``+2``)::

    slot:   0   ...       m-1
           [hhhh|    ...    |tttt]
            head run         tail run   -> up to D/B + 2 lines

Blocks of ``Z < B`` sit inside at most two lines each (``2 * D/Z``), and
blocks of ``B <= Z`` straddle at most once each (``D/B + D/Z``).

``simulate_fetches`` counts the lines actually touched by a plan's
segments, with no reuse across queries.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .robe import RobePlan, block_segments

ORIGINAL = "original"
ROBE1 = "robe1"
ROBEZ = "robez"
SCHEMES = (ORIGINAL, ROBE1, ROBEZ)


class NoTableRowError(ValueError):
    """No row of the fetch table applies to the given (D, B, Z)."""


@dataclass(frozen=True)
class FetchModelConfig:
    d: int
    b: int
    z: int = 1
    m: int = 1
    alignment_offset: int = 0

    def __post_init__(self):
        if min(self.d, self.b, self.z) < 1:
            raise ValueError("d, b and z must be >= 1")
        if self.m < self.z:
            raise ValueError("m must be >= z")
        if not 0 <= self.alignment_offset < self.b:
            raise ValueError("alignment_offset must be in [0, b)")

    @property
    def divisibility(self) -> dict[str, bool]:
        d, b, z = self.d, self.b, self.z
        return {"B|D": d % b == 0, "Z|B": b % z == 0, "B|Z": z % b == 0, "D|Z": z % d == 0, "Z|D": d % z == 0}


def robez_regime(config: FetchModelConfig) -> str:
    """Name of the robez table row that applies, or raise NoTableRowError."""
    d, b, z = config.d, config.b, config.z
    div = config.divisibility
    if z >= d:
        if not div["D|Z"]:
            raise NoTableRowError(f"Z={z} >= D={d} requires D | Z")
        if not div["B|D"]:
            raise NoTableRowError(f"Z >= D row requires B | D (B={b}, D={d})")
        return "Z>=D"
    if z < b:
        if not (div["Z|B"] and div["B|D"]):
            failed = [c for c in ("Z|B", "B|D") if not div[c]]
            raise NoTableRowError(f"Z < B row requires Z | B | D; failed {', '.join(failed)}")
        return "Z<B<D"
    if not (div["B|Z"] and div["Z|D"]):
        failed = [c for c in ("B|Z", "Z|D") if not div[c]]
        raise NoTableRowError(f"B <= Z < D row requires B | Z | D; failed {', '.join(failed)}")
    return "B<=Z<D"


def fetch_bound(config: FetchModelConfig, scheme: str) -> int:
    d, b, z = config.d, config.b, config.z
    if scheme == ORIGINAL:
        if d % b:
            raise NoTableRowError(f"original row requires B | D (B={b}, D={d})")
        return d // b + 1
    if scheme == ROBE1:
        return d
    if scheme != ROBEZ:
        raise ValueError(f"unknown scheme {scheme!r}")
    regime = robez_regime(config)
    if regime == "Z>=D":
        return d // b + 2
    if regime == "Z<B<D":
        return 2 * d // z
    return d // b + d // z


def lines_touched(segments, b: int, alignment_offset: int = 0) -> set[int]:
    lines = set()
    for start, length in segments:
        lo = (start + alignment_offset) // b
        hi = (start + length - 1 + alignment_offset) // b
        lines.update(range(lo, hi + 1))
    return lines


@dataclass
class FetchSummary:
    counts: list[int]
    max: int
    mean: float
    histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self, include_counts: bool = False) -> dict:
        out = asdict(self)
        if not include_counts:
            del out["counts"]
        out["histogram"] = {str(k): v for k, v in sorted(self.histogram.items())}
        return out


def _summarize(counts: list[int]) -> FetchSummary:
    if not counts:
        return FetchSummary([], 0, 0.0, {})
    return FetchSummary(counts, max(counts), float(np.mean(counts)), dict(Counter(counts)))


def simulate_fetches(plan: RobePlan, config: FetchModelConfig, queries) -> FetchSummary:
    """Distinct cache lines touched by each (table, token) lookup."""
    if plan.z != config.z or plan.m != config.m:
        raise ValueError(f"plan (m={plan.m}, z={plan.z}) does not match config (m={config.m}, z={config.z})")
    dims = {t.dim for t in plan.tables}
    if dims != {config.d}:
        raise ValueError(f"plan table dims {sorted(dims)} do not match config d={config.d}")
    counts = [
        len(lines_touched(block_segments(plan, e, x), config.b, config.alignment_offset))
        for e, x in queries
    ]
    return _summarize(counts)


def simulate_original_fetches(config: FetchModelConfig, queries, vocab_sizes=None) -> FetchSummary:
    """Dense row-major tables laid out back to back, first row at ``alignment_offset``."""
    d = config.d
    counts = []
    if vocab_sizes is None:
        base = {}
    else:
        base = dict(enumerate(np.concatenate([[0], np.cumsum(vocab_sizes)[:-1]]).tolist()))
    for e, x in queries:
        row = base.get(e, 0) + x
        counts.append(len(lines_touched([(row * d, d)], config.b, config.alignment_offset)))
    return _summarize(counts)


def random_queries(plan: RobePlan, n: int, seed: int = 0) -> list[tuple[int, int]]:
    rng = np.random.default_rng(seed)
    tables = plan.tables
    picks = rng.integers(0, len(tables), n)
    return [(tables[k].table_id, int(rng.integers(0, tables[k].vocab_size))) for k in picks]
