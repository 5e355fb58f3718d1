import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmiforge.metrics import (
    BLEU_EPS,
    bleu4,
    joint_accuracy,
    nlu_report,
    read_report,
    run_record,
    slot_prf,
    write_report,
    write_sweep_csv,
)
from dmiforge.mr import MeaningRepresentation, parse_mr


def toks(s):
    return s.split()


class TestBleu:
    def test_identity(self):
        refs = [toks("a b c d e"), toks("the cat sat on the mat")]
        assert bleu4(refs, refs).bleu == 1.0

    def test_empty_hypothesis(self):
        r = bleu4([[]], [toks("a b c d")])
        assert r.bleu == 0.0 and r.brevity_penalty == 0.0

    def test_brevity_penalty(self):
        r = bleu4([toks("a b c d")], [toks("a b c d e")])
        assert r.precisions == (1.0, 1.0, 1.0, 1.0)
        assert r.brevity_penalty == math.exp(-0.25)
        assert abs(r.bleu - math.exp(-0.25)) <= 1e-12

    def test_floor_when_no_four_grams(self):
        r = bleu4([toks("a b c")], [toks("a b c")])
        assert r.precisions[3] == 0.0
        assert r.bleu == pytest.approx(math.exp(0.25 * math.log(BLEU_EPS)))

    def test_corpus_level_counts(self):
        r = bleu4([toks("a b c d"), toks("x y")], [toks("a b c d"), toks("x z")])
        assert r.precisions[0] == 5 / 6 and r.hyp_len == r.ref_len == 6

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu4([], [])
        with pytest.raises(ValueError):
            bleu4([["a"]], [])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.sampled_from("abcd"), max_size=8), st.lists(st.sampled_from("abcd"), min_size=1, max_size=8)), min_size=1, max_size=6), st.randoms())
    def test_permutation_invariant_and_bounded(self, pairs, rnd):
        hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
        a = bleu4(hyps, refs).bleu
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        b = bleu4([h for h, _ in shuffled], [r for _, r in shuffled]).bleu
        assert a == pytest.approx(b, abs=1e-15) and 0.0 <= a <= 1.0


class TestNlu:
    def test_all_exact(self):
        gold = [parse_mr("name[a], area[b]"), parse_mr("food[c]")]
        rep = nlu_report(gold, gold)
        assert rep.joint_accuracy == 1.0 and rep.f1 == 1.0

    def test_half_exact_and_order_free(self):
        gold = [parse_mr("name[a], area[b]"), parse_mr("food[c]")]
        pred = [parse_mr("area[b], name[a]"), parse_mr("food[d]")]
        assert joint_accuracy(pred, gold) == 0.5

    def test_hand_example(self):
        pred = [parse_mr("name[Giraffe], eatType[pub]")]
        gold = [parse_mr("name[Giraffe], eatType[pub], area[riverside]")]
        p, r, f = slot_prf(pred, gold)
        assert (p, r, f) == (1.0, pytest.approx(2 / 3), pytest.approx(0.8))

    def test_enumerated_joint(self):
        gold = [parse_mr("a[1]"), parse_mr("a[1], b[2]"), MeaningRepresentation(), parse_mr("b[2]")]
        pred = [parse_mr("a[1]"), parse_mr("a[1]"), MeaningRepresentation(), parse_mr("b[3]")]
        assert joint_accuracy(pred, gold) == 0.5
        assert joint_accuracy([], []) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            joint_accuracy([MeaningRepresentation()], [])
        with pytest.raises(ValueError):
            slot_prf([], [MeaningRepresentation()])


class TestReports:
    def record(self, seed=0, bleu_hyp="a b c d"):
        b = bleu4([toks(bleu_hyp)], [toks("a b c d e")])
        n = nlu_report([parse_mr("a[1]")], [parse_mr("a[1], b[2]")])
        return run_record("step1+2", seed, {"k": 10}, b, n, {"student": 40})

    def test_round_trip(self, tmp_path):
        rec = self.record()
        write_report(rec, tmp_path / "m.json")
        got = read_report(tmp_path / "m.json")
        assert got["bleu4"]["bleu"] == rec["bleu4"]["bleu"]
        assert got["nlu"] == rec["nlu"] and got["steps"] == rec["steps"]
        assert "wall" not in str(got)

    def test_same_seed_identical(self, tmp_path):
        write_report(self.record(), tmp_path / "a.json")
        write_report(self.record(), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_sweep_csv(self, tmp_path):
        write_sweep_csv([self.record(s) for s in range(5)], tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert len(lines) == 6 and lines[0].startswith("run,seed,bleu4")
