import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robez.hashing import HashParams
from robez.memfetch import (
    ORIGINAL,
    ROBE1,
    ROBEZ,
    FetchModelConfig,
    NoTableRowError,
    fetch_bound,
    lines_touched,
    random_queries,
    robez_regime,
    simulate_fetches,
    simulate_original_fetches,
)
from robez.robe import RobePlan, TableSpec, make_plan


def cfg(d, b, z=1, m=None, off=0):
    return FetchModelConfig(d, b, z, m if m is not None else max(z, 1), off)


def test_table_hand_values():
    assert fetch_bound(cfg(16, 4), ORIGINAL) == 5
    assert fetch_bound(cfg(16, 4), ROBE1) == 16
    assert fetch_bound(cfg(16, 4, 2), ROBEZ) == 16
    assert fetch_bound(cfg(16, 4, 8), ROBEZ) == 6
    assert fetch_bound(cfg(16, 4, 32), ROBEZ) == 6
    assert fetch_bound(cfg(16, 4, 4), ROBEZ) == 8  # B = Z sits in the B <= Z < D row


def test_no_row_names_condition():
    with pytest.raises(NoTableRowError, match="Z\\|B"):
        fetch_bound(cfg(16, 4, 3), ROBEZ)
    with pytest.raises(NoTableRowError, match="D \\| Z"):
        fetch_bound(cfg(16, 4, 24), ROBEZ)
    with pytest.raises(NoTableRowError, match="B \\| D"):
        fetch_bound(cfg(6, 4), ORIGINAL)
    with pytest.raises(ValueError):
        fetch_bound(cfg(16, 4), "bogus")
    with pytest.raises(ValueError):
        FetchModelConfig(16, 4, 8, 4)


@st.composite
def row_configs(draw):
    """(row, d, b, z) with the row's divisibility conditions satisfied."""
    row = draw(st.sampled_from(["original", "robe1", "z<b", "b<=z<d", "z>=d"]))
    unit = draw(st.integers(1, 3))
    if row == "z<b":
        z = unit
        b = z * draw(st.integers(2, 4))
        d = b * draw(st.integers(2, 4))
    elif row == "b<=z<d":
        b = unit
        z = b * draw(st.integers(1, 4))
        d = z * draw(st.integers(2, 4))
    else:
        b = unit * draw(st.integers(1, 4))
        d = b * draw(st.integers(1, 6))
        z = d * draw(st.integers(1, 4))
    return row, d, b, z


@settings(max_examples=200, deadline=None)
@given(row_configs())
def test_bound_matches_table_rows(case):
    row, d, b, z = case
    c = cfg(d, b, z)
    if row == "original":
        assert fetch_bound(c, ORIGINAL) == d // b + 1
    elif row == "robe1":
        assert fetch_bound(c, ROBE1) == d
    elif row == "z<b":
        assert robez_regime(c) == "Z<B<D" and fetch_bound(c, ROBEZ) == 2 * d // z
    elif row == "b<=z<d":
        assert robez_regime(c) == "B<=Z<D" and fetch_bound(c, ROBEZ) == d // b + d // z
    else:
        assert robez_regime(c) == "Z>=D" and fetch_bound(c, ROBEZ) == d // b + 2


def test_lines_touched_alignment():
    assert lines_touched([(8, 4)], 4) == {2}
    assert lines_touched([(6, 4)], 4) == {1, 2}
    assert lines_touched([(8, 4)], 4, alignment_offset=1) == {2, 3}
    assert lines_touched([(10, 2), (0, 2)], 4) == {2, 0}


def test_single_block_aligned_and_straddling():
    for start, want in [(8, 1), (6, 2)]:
        plan = RobePlan(64, 4, (TableSpec(0, 1, 4),), HashParams(1, 1, 1, start, range=64))
        assert simulate_fetches(plan, cfg(4, 4, 4, 64), [(0, 0)]).max == want


@pytest.mark.parametrize("z", [1, 2, 4, 8, 16, 32])
def test_simulation_within_bound_and_lower_bound(z):
    d, b = 16, 4
    m = 100 * d + 7
    plan = make_plan(m, z, [TableSpec(0, 5000, d)], seed=z)
    q = random_queries(plan, 2000, seed=1)
    c = cfg(d, b, z, m)
    s = simulate_fetches(plan, c, q)
    bound = fetch_bound(c, ROBE1 if z == 1 else ROBEZ)
    assert s.max <= bound
    assert min(s.counts) >= math.ceil(d / b)
    assert sum(s.histogram.values()) == 2000


def test_simulated_max_non_increasing_in_z():
    d, b, m = 16, 4, 1607
    maxima = []
    for z in [1, 2, 4, 8, 16]:
        plan = make_plan(m, z, [TableSpec(0, 5000, d)], seed=3)
        maxima.append(simulate_fetches(plan, cfg(d, b, z, m), random_queries(plan, 3000, seed=2)).max)
    assert all(a >= b_ for a, b_ in zip(maxima, maxima[1:]))


def test_original_layout():
    c = cfg(16, 4, off=0)
    assert simulate_original_fetches(c, [(0, k) for k in range(10)]).max == 4
    c = cfg(16, 4, off=1)
    assert simulate_original_fetches(c, [(0, k) for k in range(10)]).max == 5
    s = simulate_original_fetches(cfg(6, 4), [(0, 0), (1, 0)], vocab_sizes=[3, 3])
    assert s.counts == [2, 2]  # rows 0 and 3 -> elements 0..5, 18..23


def test_mismatch_and_summary():
    plan = make_plan(100, 4, [TableSpec(0, 10, 8)])
    with pytest.raises(ValueError, match="does not match"):
        simulate_fetches(plan, cfg(8, 4, 8, 100), [])
    with pytest.raises(ValueError, match="dims"):
        simulate_fetches(plan, cfg(16, 4, 4, 100), [])
    s = simulate_fetches(plan, cfg(8, 4, 4, 100), [])
    assert s.max == 0 and s.to_dict()["histogram"] == {}
