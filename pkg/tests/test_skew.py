import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from icskew.errors import DomainError, IncompleteTableError, ValidationError
from icskew.skew import (
    FULL,
    HALF,
    DipTable,
    IcsEntry,
    IcsTable,
    arm_imbalance,
    combine_uncertainty,
    ics_table,
    pairwise_skew,
    parse_pair,
    read_dip_csv,
    read_ics_csv,
    rms_skew,
    write_dip_csv,
    write_ics_csv,
)

DIPS_12 = {
    (1, 2): 13.73, (1, 3): 16.22, (1, 4): 23.88, (2, 1): 23.98, (2, 3): 21.40, (2, 4): 29.06,
    (3, 1): 21.62, (3, 2): 16.49, (3, 4): 26.53, (4, 1): 14.15, (4, 2): 8.88, (4, 3): 11.30,
}


def test_combine_uncertainty():
    assert round(combine_uncertainty(0.002, 0.15), 2) == 0.15
    assert combine_uncertainty(0.0, 0.0) == 0.0
    assert combine_uncertainty(0.3, 0.0) == 0.3
    with pytest.raises(DomainError):
        combine_uncertainty(-1.0, 0.1)


def test_pairwise_skew_conventions():
    full = pairwise_skew(13.73, 23.98, 0.15, FULL)
    assert full.magnitude_ps == pytest.approx(10.25)
    assert round(full.sigma_ps, 2) == 0.21
    half = pairwise_skew(13.73, 23.98, 0.15, HALF)
    assert half.magnitude_ps == pytest.approx(5.125)
    assert round(half.sigma_ps, 3) == 0.106
    assert pairwise_skew(4.0, 4.0, 0.1).magnitude_ps == 0.0
    with pytest.raises(IncompleteTableError):
        pairwise_skew(None, 3.0, 0.1)
    with pytest.raises(ValidationError):
        pairwise_skew(1.0, 2.0, 0.1, "third")


@given(st.floats(-100, 100), st.floats(-100, 100), st.sampled_from([HALF, FULL]))
def test_pairwise_swap_symmetry(a, b, conv):
    assert pairwise_skew(a, b, 0.1, conv) == pairwise_skew(b, a, 0.1, conv)


def test_arm_imbalance_12m_dips():
    rep = arm_imbalance(DipTable.from_positions(DIPS_12, 0.15))
    assert rep.delta_ps[(1, 2)] == pytest.approx(18.855)
    assert len(rep.delta_ps) == 6
    assert rep.spread_ps == pytest.approx(0.16, abs=1e-9)
    assert rep.consistent


def test_arm_imbalance_symmetric():
    dips = DipTable.from_positions({(1, 2): 7.0, (2, 1): 7.0}, 0.1)
    rep = arm_imbalance(dips)
    assert rep.delta_ps[(1, 2)] == 7.0 and rep.spread_ps == 0.0


@given(st.floats(-1e3, 1e3))
def test_common_shift_cancels(c):
    base = DipTable.from_positions(DIPS_12, 0.15)
    moved = DipTable.from_positions({k: v + c for k, v in DIPS_12.items()}, 0.15)
    a, b = ics_table(base), ics_table(moved)
    for p in a.entries:
        assert b.entries[p].magnitude_ps == pytest.approx(a.entries[p].magnitude_ps, abs=1e-9)
    assert arm_imbalance(moved).spread_ps == pytest.approx(arm_imbalance(base).spread_ps, abs=1e-9)


def test_rms_tabulated_values():
    t12 = {(1, 2): 10.25, (1, 3): 5.41, (1, 4): 9.73, (2, 3): 4.91, (2, 4): 20.18, (3, 4): 15.24}
    t49 = {(1, 2): 24.26, (1, 3): 14.75, (1, 4): 24.45, (2, 3): 5.97, (2, 4): 18.99, (3, 4): 5.49}
    for table, ref in ((t12, 12.20), (t49, 17.47)):
        rms, srms = rms_skew(IcsTable({p: IcsEntry(v, 0.11) for p, v in table.items()}))
        assert rms == pytest.approx(ref, abs=0.01)
        assert srms == pytest.approx(0.045, abs=0.001)
    zeros = IcsTable({p: IcsEntry(0.0, 0.1) for p in t12})
    assert rms_skew(zeros)[0] == 0.0


@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6), st.permutations(range(6)))
def test_rms_invariances(signed, perm):
    pairs = list(itertools.combinations(range(1, 5), 2))
    a = IcsTable({p: IcsEntry(abs(v), 0.1) for p, v in zip(pairs, signed)})
    b = IcsTable({pairs[i]: IcsEntry(abs(-signed[j]), 0.1) for i, j in enumerate(perm)})
    assert rms_skew(a)[0] == pytest.approx(rms_skew(b)[0], rel=1e-12, abs=1e-12)


def test_incomplete_tables():
    partial = dict(list(DIPS_12.items())[:7])
    dips = DipTable.from_positions(partial, 0.15)
    with pytest.raises(IncompleteTableError) as err:
        ics_table(dips)
    assert len(err.value.missing) == 5
    ics = ics_table(dips, allow_partial=True)
    assert 0 < len(ics.entries) < 6
    with pytest.raises(IncompleteTableError):
        rms_skew(ics)
    rms, _ = rms_skew(ics, allow_partial=True)
    assert rms > 0
    none = DipTable.from_positions({(1, 2): 1.0, (1, 3): 2.0}, 0.1)
    with pytest.raises(IncompleteTableError):
        ics_table(none, allow_partial=True)


def test_sigma_d_quadrature_mean():
    dips = DipTable.from_positions({(1, 2): 1.0, (2, 1): 2.0}, 0.1)
    dips.entries[(2, 1)].sigma_ps = 0.3
    e = ics_table(dips, allow_partial=True).entries[(1, 2)]
    assert e.sigma_ps == pytest.approx(math.sqrt(0.5 * (0.01 + 0.09)) / math.sqrt(2))


def test_parse_pair():
    assert parse_pair("3-1") == (3, 1)
    assert parse_pair("3_1") == (3, 1)
    for bad in ("x", "2-2", "1-2-3"):
        with pytest.raises(ValidationError):
            parse_pair(bad)


def test_csv_round_trips(tmp_path):
    dips = DipTable.from_positions(DIPS_12, 0.15)
    back = read_dip_csv(write_dip_csv(dips, tmp_path / "d.csv"))
    assert back.entries == dips.entries
    ics = ics_table(dips, FULL)
    back_ics = read_ics_csv(write_ics_csv(ics, tmp_path / "i.csv"), FULL)
    assert back_ics.entries == ics.entries
    assert (tmp_path / "i.csv").read_text().splitlines()[-1].startswith("RMS,")
