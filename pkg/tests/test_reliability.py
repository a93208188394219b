import warnings

import pytest
from hypothesis import given, strategies as st

from commval.errors import CommunityTooSmall, InsufficientData, UnadjudicatedItem
from commval.extraction import ExtractionRecord
from commval.reliability import (
    AnnotationTable,
    alpha_from_units,
    krippendorff_alpha,
    label_accuracy,
    parse_judgment,
    sample_for_annotation,
    write_worksheet,
)

from oracles import krippendorff_alpha_oracle


def table(rows, resolution=()):
    return AnnotationTable([(f"c{i}", "v") for i in range(len(rows))], ["rater_1", "rater_2"],
                           [list(r) for r in rows], list(resolution))


def test_alpha_small_example():
    units = [("A", "A"), ("A", "B"), ("B", "A"), ("B", "B")]
    got = alpha_from_units(units)
    assert got == pytest.approx(krippendorff_alpha_oracle(units), abs=1e-12)
    # D_o = 4/8, D_e = 16/56
    assert got == pytest.approx(1 - 0.5 / (16 / 28), abs=1e-12)


def test_perfect_agreement_is_one():
    assert krippendorff_alpha(table([(True, True), (False, False), (True, True)])) == 1.0


def test_missing_judgments_dropped():
    t = table([(True, True), (False, None), (False, False), (True, False)])
    assert krippendorff_alpha(t) == pytest.approx(
        krippendorff_alpha_oracle([[True, True], [False, False], [True, False]]))
    with pytest.raises(InsufficientData):
        krippendorff_alpha(table([(True, None), (True, True)]))


judg = st.sampled_from([True, False, None])


@given(st.lists(st.tuples(judg, judg, judg), min_size=2, max_size=30), st.randoms())
def test_alpha_matches_oracle_and_invariances(rows, rnd):
    units = [list(r) for r in rows]
    if sum(1 for u in units if sum(v is not None for v in u) >= 2) < 2:
        return
    if len({v for u in units for v in u if v is not None}) < 2:
        return
    t = AnnotationTable([(str(i), "v") for i in range(len(rows))], ["r1", "r2", "r3"], units)
    a = krippendorff_alpha(t)
    assert a == pytest.approx(krippendorff_alpha_oracle(units), abs=1e-9)
    assert a <= 1 + 1e-12
    shuffled = [u[:] for u in units]
    rnd.shuffle(shuffled)
    for u in shuffled:
        rnd.shuffle(u)
    t2 = AnnotationTable([(str(i), "v") for i in range(len(rows))], ["r1", "r2", "r3"], shuffled)
    assert krippendorff_alpha(t2) == pytest.approx(a, abs=1e-9)


def test_accuracy():
    rows = [(True, True)] * 100
    assert label_accuracy(table(rows, [True] * 77 + [False] * 23)) == 0.77
    with pytest.raises(UnadjudicatedItem):
        label_accuracy(table(rows, [True] * 99 + [None]))
    with pytest.raises(UnadjudicatedItem):
        label_accuracy(table(rows[:2], [True]))


def test_parse_judgment():
    assert parse_judgment("Yes") is True and parse_judgment("0") is False
    assert parse_judgment("  ") is None and parse_judgment(None) is None
    with pytest.raises(ValueError):
        parse_judgment("maybe")


def records(n_comm=80, per=5):
    out = []
    for c in range(n_comm):
        for j in range(per):
            out.append(ExtractionRecord(f"c{c:02d}", f"t{c}_{j}", "2019", "", ("funny",), False, "", "m"))
        out.append(ExtractionRecord(f"c{c:02d}", f"na{c}", "2019", "", (), True, "", "m"))
    return out


def test_sample_for_annotation():
    rows = sample_for_annotation(records(), 2, seed=0, mapping={"funny": "humor"})
    assert len({r["comment_id"] for r in rows}) == 160
    assert all(r["value"] == "humor" and not r["comment_id"].startswith("na") for r in rows)
    assert rows == sample_for_annotation(records(), 2, seed=0, mapping={"funny": "humor"})
    assert rows != sample_for_annotation(records(), 2, seed=1, mapping={"funny": "humor"})
    with pytest.warns(CommunityTooSmall):
        small = sample_for_annotation(records(1, 1), 2, seed=0)
    assert len(small) == 1
    with pytest.raises(InsufficientData):
        sample_for_annotation([], 2, 0)


def test_worksheet_roundtrip(tmp_path):
    rows = sample_for_annotation(records(3, 3), 2, seed=0)
    for i, r in enumerate(rows):
        r["rater_1"], r["rater_2"] = "yes", ("yes" if i % 2 else "no")
        r["resolution"] = "yes"
    path = tmp_path / "w.csv"
    write_worksheet(path, rows)
    t = AnnotationTable.from_worksheet(path)
    assert t.raters == ["rater_1", "rater_2"] and len(t.items) == len(rows)
    assert t.judgments[0] == [True, False]
    assert label_accuracy(t) == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        krippendorff_alpha(t)
