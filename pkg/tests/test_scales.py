import numpy as np
import pytest
from hypothesis import given, strategies as st

from commval.errors import UnknownCommunity, UnknownValue, UnmappedKeyword
from commval.extraction import ExtractionRecord
from commval.scales import (
    Scale,
    ScaleThresholds,
    ValueCommunityMatrix,
    build_matrix,
    compare_years,
    na_report,
    prevalence_plot_data,
    prevalence_report,
    record_values,
    scale_table,
)


def rec(community, tid, kws=(), na=False, year="2019", reasoning=""):
    return ExtractionRecord(community, tid, year, reasoning, tuple(kws), na, "", "m")


def matrix_with(prevalences, n=80):
    comms = [f"c{i:02d}" for i in range(n)]
    values = sorted(prevalences)
    counts = np.zeros((len(values), n), dtype=np.int64)
    for i, v in enumerate(values):
        counts[i, :prevalences[v]] = 1
    return ValueCommunityMatrix(values, comms, counts, "2019")


def test_scale_examples():
    t = ScaleThresholds()
    assert t.classify(80, 80) is Scale.MACRO
    assert t.classify(60, 80) is Scale.MACRO
    assert t.classify(59, 80) is Scale.MESO
    assert t.classify(53, 80) is Scale.MESO
    assert t.classify(21, 80) is Scale.MESO
    assert t.classify(20, 80) is Scale.MICRO
    assert t.classify(7, 80) is Scale.MICRO
    with pytest.raises(ValueError):
        ScaleThresholds(0.2, 0.3)


def test_fixture_scales_and_report_order():
    m = matrix_with({"humor": 80, "wit": 40, "stoicism": 5})
    assert scale_table(m) == {"humor": Scale.MACRO, "wit": Scale.MESO, "stoicism": Scale.MICRO}
    rows = prevalence_report(m)
    assert [r.value for r in rows] == ["humor", "wit", "stoicism"]
    plot = prevalence_plot_data(rows)
    assert plot[0] == {"year": "2019", "value": "humor", "prevalence": 80, "scale": "macro"}


def test_build_matrix_counts_each_record_once_per_value():
    mapping = {"funny": "humor", "humour": "humor", "kind": "kindness"}
    recs = [rec("a", "1", ["funny", "humour"]), rec("a", "2", ["kind"]), rec("b", "3", ["funny"]),
            rec("b", "4", na=True)]
    m = build_matrix(recs, mapping, communities=["z"])
    assert m.communities == ["a", "b", "z"] and m.values == ["humor", "kindness"]
    assert m.count("humor", "a") == 1 and m.count("humor", "b") == 1
    assert m.prevalence("humor") == 2 and m.prevalence("kindness") == 1
    assert m.records_per_community == {"a": 2, "b": 2, "z": 0}
    with pytest.raises(UnknownCommunity):
        m.count("humor", "nope")
    with pytest.raises(UnknownValue):
        m.prevalence("nope")
    with pytest.raises(UnmappedKeyword):
        build_matrix([rec("a", "1", ["ghost"])], mapping)
    assert record_values(rec("a", "x", na=True), {}) == set()


def test_json_roundtrip():
    m = build_matrix([rec("a", "1", ["x"]), rec("b", "2", ["y"])], {"x": "x", "y": "y"})
    again = ValueCommunityMatrix.from_json(m.to_json())
    assert again.to_json() == m.to_json()


def test_compare_years_example_and_antisymmetry():
    mapping = {k: k for k in ("humor", "wit", "empathy")}
    m19 = build_matrix([rec("a", "1", ["humor", "wit"])], mapping, year_tag="2019")
    m20 = build_matrix([rec("a", "2", ["humor", "empathy"], year="2020")], mapping, year_tag="2020")
    kept, added, removed = compare_years(m19, m20, "a")
    assert (kept, added, removed) == ({"humor"}, {"empathy"}, {"wit"})
    k2, a2, r2 = compare_years(m20, m19, "a")
    assert (k2, a2, r2) == (kept, removed, added)


@given(st.lists(st.tuples(st.sampled_from("abcd"), st.lists(st.sampled_from("pqrs"), max_size=3), st.booleans()),
                max_size=40))
def test_matrix_properties(rows):
    recs = [rec(c, str(i), [] if na else kws, na=na or not kws) for i, (c, kws, na) in enumerate(rows)]
    m = build_matrix(recs, {k: k for k in "pqrs"})
    for comm in m.communities:
        col = m.counts[:, m.communities.index(comm)]
        # no column can exceed the number of records in that community
        assert col.max(initial=0) <= m.records_per_community[comm]
    for v in m.values:
        assert 1 <= m.prevalence(v) <= len(m.communities)
        assert m.comment_count(v) >= m.prevalence(v)


def test_na_report_totals():
    recs = [rec(f"c{i}", f"t{j}", na=True, reasoning="no value") for i in range(122) for j in range(1)]
    recs += [rec("c0", f"u{j}", na=True) for j in range(13)]
    recs += [rec("c1", "v", ["x"])]
    report = na_report(recs)
    assert report.total == 135 and report.n_communities == 122
    assert report.per_community["c0"] == 14
    assert report.to_json()["total"] == 135
    assert len(report.explanations) == 135
