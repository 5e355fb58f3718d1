import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmiforge.mr import (
    DuplicateSlotWarning,
    MeaningRepresentation,
    MRParseError,
    Schema,
    SlotSpec,
    linearize,
    normalize,
    parse_mr,
    schema_from_corpus,
    serialize_mr,
    slot_fscore,
)


def mr(s):
    return parse_mr(s)


class TestParse:
    def test_three_pairs(self):
        m = mr("name[Giraffe], eatType[pub], area[riverside]")
        assert m.pairs == (("name", "giraffe"), ("eattype", "pub"), ("area", "riverside"))

    def test_empty_string(self):
        assert mr("") == MeaningRepresentation()
        assert mr("   ") == MeaningRepresentation()

    def test_unclosed_bracket_reports_offset(self):
        with pytest.raises(MRParseError) as err:
            mr("name[Giraffe")
        assert err.value.offset == 4

    def test_offset_counts_bytes(self):
        # "é" is two bytes in UTF-8
        with pytest.raises(MRParseError) as err:
            mr("name[café], area")
        assert err.value.offset == len("name[café], area".encode())

    @pytest.mark.parametrize("bad", ["name", "[x]", "name[]", "name[a] area[b]", "name[a],", "name[a]]"])
    def test_malformed(self, bad):
        with pytest.raises(MRParseError):
            mr(bad)

    def test_duplicate_slot_keeps_first_and_warns(self):
        with pytest.warns(DuplicateSlotWarning):
            m = mr("name[a], name[b]")
        assert m.pairs == (("name", "a"),)

    def test_normalization(self):
        assert mr("  Name [ The   Eagle ] ").pairs == (("name", "the eagle"),)
        assert normalize(normalize("  A  b ")) == normalize("  A  b ") == "a b"

    def test_constructor_rejects_duplicates_and_blanks(self):
        with pytest.raises(ValueError):
            MeaningRepresentation((("a", "x"), ("a", "y")))
        with pytest.raises(ValueError):
            MeaningRepresentation((("a", ""),))


class TestSerialize:
    def test_examples(self):
        assert serialize_mr(MeaningRepresentation()) == ""
        assert serialize_mr(MeaningRepresentation.from_pairs([("name", "Giraffe")])) == "name[giraffe]"

    def test_round_trip_table_style(self):
        for s in ["name[Giraffe], eatType[pub], area[riverside]", "name[The Eagle], food[French], priceRange[£20-25]"]:
            m = mr(s)
            assert mr(serialize_mr(m)) == m
            assert str(m) == serialize_mr(m)


class TestLinearize:
    def test_examples(self):
        assert linearize(MeaningRepresentation()) == []
        assert linearize(mr("area[riverside]")) == ["<slot:area>", "riverside"]
        assert linearize(mr("name[Blue Spice]")) == ["<slot:name>", "blue", "spice"]


class TestSlotFscore:
    def test_identical(self):
        m = mr("name[a], area[b]")
        assert slot_fscore(m, m).f1 == 1.0

    def test_disjoint(self):
        assert slot_fscore(mr("name[a]"), mr("area[b]")).f1 == 0.0

    def test_hand_example(self):
        r = slot_fscore(mr("name[Giraffe], eatType[pub]"), mr("name[Giraffe], eatType[pub], area[riverside]"))
        assert r.precision == 1.0
        assert r.recall == pytest.approx(2 / 3, abs=0)
        assert r.f1 == 0.8
        assert (r.matched, r.pred_only, r.gold_only) == (2, 0, 1)

    def test_value_must_match(self):
        r = slot_fscore(mr("name[a]"), mr("name[b]"))
        assert r.f1 == 0.0

    def test_both_empty(self):
        assert slot_fscore(MeaningRepresentation(), MeaningRepresentation()).f1 == 1.0

    def test_one_empty(self):
        r = slot_fscore(MeaningRepresentation(), mr("a[b]"))
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


class TestSchema:
    def test_single(self):
        s = schema_from_corpus([mr("area[riverside]")])
        assert s.slots == {"area": SlotSpec(("riverside",), False)}

    def test_union(self):
        s = schema_from_corpus([mr("area[riverside]"), mr("area[city centre]")])
        assert len(s.slots["area"].values) == 2

    def test_open_threshold(self):
        mrs = [mr(f"name[n{i}], area[a]") for i in range(5)]
        s = schema_from_corpus(mrs, open_threshold=3)
        assert s.slots["name"].open and not s.slots["area"].open

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            schema_from_corpus([])

    def test_validate_and_json(self):
        s = schema_from_corpus([mr("area[riverside]")])
        s.validate(mr("area[riverside]"))
        with pytest.raises(ValueError):
            s.validate(mr("area[docks]"))
        with pytest.raises(ValueError):
            s.validate(mr("food[thai]"))
        assert Schema.from_json(s.to_json()) == s


# ------------------------------------------------------------------ properties

SLOTS = ["name", "food", "area", "near", "rating"]
VALUES = ["riverside", "city centre", "the eagle", "blue spice", "5 out of 5", "£20-25", "café rouge"]


@st.composite
def mrs(draw):
    slots = draw(st.lists(st.sampled_from(SLOTS), unique=True, max_size=len(SLOTS)))
    return MeaningRepresentation.from_pairs((s, draw(st.sampled_from(VALUES))) for s in slots)


@given(mrs())
def test_round_trip_property(m):
    assert parse_mr(serialize_mr(m)) == m


@given(mrs(), mrs())
def test_fscore_symmetry(a, b):
    ab, ba = slot_fscore(a, b), slot_fscore(b, a)
    assert ab.precision == ba.recall and ab.recall == ba.precision and ab.f1 == ba.f1


@given(mrs())
def test_self_match(m):
    if len(m):
        assert slot_fscore(m, m).f1 == 1.0


@given(mrs(), mrs())
def test_adding_matching_pair_never_lowers_recall(pred, gold):
    missing = [p for p in gold.pairs if p not in pred.as_set() and p[0] not in pred.slots]
    if not missing:
        return
    bigger = MeaningRepresentation(pred.pairs + (missing[0],))
    assert slot_fscore(bigger, gold).recall >= slot_fscore(pred, gold).recall


@given(mrs(), mrs())
def test_linearize_injective(a, b):
    if a != b:
        assert linearize(a) != linearize(b)


def test_from_pairs_warning_is_not_raised_for_unique():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        MeaningRepresentation.from_pairs([("a", "x"), ("b", "y")])
