import numpy as np
import pytest

from dmiforge.annotate import (
    EMPTY_TEXT,
    NoiseConfig,
    OracleNLU,
    TemplateAnnotator,
    TemplateBank,
    annotate,
    extract_templates,
    fallback_fragment,
    filter_consistency,
    ingest_external,
)
from dmiforge.corpus import WEAK, value_pools, write_weak_jsonl
from dmiforge.mr import MeaningRepresentation, parse_mr, slot_fscore
from dmiforge.synth import SynthSpec, synth_benchmark

from helpers import make_pair


@pytest.fixture(scope="module")
def bench():
    ds, g = synth_benchmark(SynthSpec(5, 4, 40, 400, seed=2))
    bank = extract_templates(ds.pairs, value_pools(ds.unlabeled_mrs + [p.mr for p in ds.pairs]))
    return ds, g, bank


def corruption(g, pairs):
    return float(np.mean([slot_fscore(g.parse(p.text), p.mr).f1 < 1 for p in pairs]))


class TestTemplates:
    def test_substring_replacement(self):
        bank = extract_templates([make_pair("area[riverside]", "in the riverside area")])
        assert bank.fragments["area"] == [("in", "the", "<area>", "area")]

    def test_missing_value_gets_fallback(self):
        bank = extract_templates([make_pair("area[riverside], food[thai]", "in the riverside area")])
        assert bank.fragments["food"] == [fallback_fragment("food")]
        assert fallback_fragment("food") == ("the", "food", "is", "<food>")

    def test_needs_clean_pairs(self):
        with pytest.raises(ValueError):
            extract_templates([])

    def test_zero_noise_reproduces_ground_truth(self, bench):
        ds, g, bank = bench
        weak = annotate(ds.unlabeled_mrs, bank, NoiseConfig())
        assert all(p.text == g.realize(p.mr) for p in weak)
        assert corruption(g, weak) == 0.0


class TestAnnotate:
    def test_provenance_ids_determinism(self, bench):
        ds, _, bank = bench
        noise = NoiseConfig(0.2, 0.2, 0.1, seed=5)
        a = annotate(ds.unlabeled_mrs[:50], bank, noise, start_id=100)
        b = annotate(ds.unlabeled_mrs[:50], bank, noise, start_id=100)
        assert a == b
        assert [p.id for p in a] == list(range(100, 150))
        assert all(p.provenance == WEAK and p.source == "template" and p.text for p in a)
        c = annotate(ds.unlabeled_mrs[:50], bank, NoiseConfig(0.2, 0.2, 0.1, seed=6), start_id=100)
        assert a != c

    def test_hallucination_always_adds_a_foreign_pair(self, bench):
        ds, g, bank = bench
        weak = annotate(ds.unlabeled_mrs[:200], bank, NoiseConfig(p_hallucinate=1.0, seed=1))
        pools = bank.pools
        for p in weak:
            text = " " + " ".join(p.text) + " "
            own = set(p.mr.as_dict().values())
            foreign = [v for vs in pools.values() for v in vs if v not in own and f" {v} " in text]
            assert foreign, p

    def test_drop_rate_binomial(self):
        # 1000 single-slot MRs: each slot is dropped independently with p = 0.5
        bank = TemplateBank(fragments={"area": [("in", "<area>")]}, pools={"area": ["x"]}, words=["in", "x"])
        ann = TemplateAnnotator(bank, NoiseConfig(p_drop=0.5, seed=9))
        mr = parse_mr("area[x]")
        dropped = sum(ann.annotate(mr, i) == EMPTY_TEXT for i in range(1000))
        assert abs(dropped / 1000 - 0.5) <= 0.05

    def test_never_empty(self):
        bank = TemplateBank(fragments={"area": [("in", "<area>")]}, pools={"area": ["x"]}, words=["in", "x"])
        ann = TemplateAnnotator(bank, NoiseConfig(p_drop=1.0))
        assert ann.annotate(parse_mr("area[x]"), 0) == EMPTY_TEXT
        assert ann.annotate(MeaningRepresentation(), 0) == EMPTY_TEXT

    def test_pair_rate_scales_corruption(self, bench):
        ds, g, bank = bench
        full = corruption(g, annotate(ds.unlabeled_mrs, bank, NoiseConfig(0.15, 0.15, 0.1, seed=3)))
        part = corruption(g, annotate(ds.unlabeled_mrs, bank, NoiseConfig(0.15, 0.15, 0.1, seed=3, pair_rate=0.4)))
        assert part == pytest.approx(0.4 * full, abs=0.08)

    @pytest.mark.parametrize("field", ["p_drop", "p_hallucinate", "p_lexical", "pair_rate"])
    def test_noise_bounds(self, field):
        with pytest.raises(ValueError):
            NoiseConfig(**{field: 1.5})

    def test_ingest_external(self, tmp_path):
        pairs = [make_pair("area[riverside]", "by the river", 3, WEAK)]
        write_weak_jsonl(pairs, tmp_path / "w.jsonl")
        (got,) = ingest_external(tmp_path / "w.jsonl")
        assert got.provenance == WEAK and got.text == ("by", "the", "river")


class TestFilter:
    def test_threshold_zero_keeps_all(self, bench):
        ds, g, bank = bench
        weak = annotate(ds.unlabeled_mrs[:100], bank, NoiseConfig(0.3, 0.3, 0.2))
        out = filter_consistency(weak, OracleNLU(g.parse), 0.0)
        assert out.kept == weak and out.rejected_count == 0
        assert sum(out.histogram) == len(weak)

    def test_perfect_nlu_on_clean_keeps_all(self, bench):
        ds, g, bank = bench
        weak = annotate(ds.unlabeled_mrs[:100], bank, NoiseConfig())
        assert len(filter_consistency(weak, OracleNLU(g.parse), 1.0).kept) == 100

    def test_partition_scores_and_rejected_texts(self, bench):
        ds, g, bank = bench
        weak = annotate(ds.unlabeled_mrs[:200], bank, NoiseConfig(0.3, 0.3, 0.1, seed=4))
        out = filter_consistency(weak, OracleNLU(g.parse), 0.7)
        assert len(out.kept) + out.rejected_count == len(weak)
        assert set(map(id, out.kept)).isdisjoint(map(id, out.rejected))
        kept_scores = out.scores[[i for i, p in enumerate(weak) if p in out.kept]]
        assert (kept_scores >= 0.7).all()
        assert out.rejected_texts == [p.text for p in out.rejected]

    def test_monotone_and_oracle_efficacy(self, bench):
        ds, g, bank = bench
        weak = annotate(ds.unlabeled_mrs, bank, NoiseConfig(0.15, 0.15, 0.1, seed=8))
        base = corruption(g, weak)
        kept_sets = []
        for thr in (0.3, 0.5, 0.7, 0.9):
            out = filter_consistency(weak, OracleNLU(g.parse), thr)
            kept_sets.append({p.id for p in out.kept})
            assert corruption(g, out.kept) <= base
        for lo, hi in zip(kept_sets, kept_sets[1:]):
            assert hi <= lo

    def test_rejects_non_nlu(self, bench):
        with pytest.raises(TypeError):
            filter_consistency([], object())
        with pytest.raises(ValueError):
            filter_consistency([], OracleNLU(lambda t: MeaningRepresentation()), 1.5)
