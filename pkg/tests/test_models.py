import math

import numpy as np
import pytest

from dmiforge.corpus import Dataset, build_vocab
from dmiforge.kernel import CheckpointError, Tape, adam_step, total
from dmiforge.models import ABSENT, UNK_VALUE, ModelConfig, ModelSet, load_model, save_model
from dmiforge.mr import MeaningRepresentation, parse_mr, schema_from_corpus
from dmiforge.training import Pools, TrainConfig, train

from helpers import make_pair

TINY = ModelConfig(embed_dim=8, hidden_dim=16, latent_dim=12, encoder_layers=1, max_decode_len=20, seed=0)
SUP = dict(lambda_dtd=0.0, lambda_tdt=0.0, lambda_ae=0.0, base_lr=0.01, batch=4, eval_every=1000)


def build(pairs, cfg=TINY):
    vocab = build_vocab(Dataset(list(pairs)))
    schema = schema_from_corpus([p.mr for p in pairs])
    return ModelSet(cfg, vocab, schema)


@pytest.fixture
def model(toy_pairs):
    return build(toy_pairs)


@pytest.fixture(scope="module")
def overfit():
    pair = make_pair("name[Giraffe], area[riverside]", "Giraffe is in the riverside area.")
    other = make_pair("name[Blue Spice], area[city centre]", "Blue Spice is near the city centre.", 1)
    m = build([pair, other])
    train(m, TrainConfig(**SUP, max_steps=500, seed=1), [pair])
    return m, pair


def zero(model, *names):
    for n in names:
        model.p(n).data = np.zeros_like(model.p(n).data)


class TestScoring:
    def test_uniform_text_decoder(self, model, toy_pairs):
        zero(model, "dy.out.w", "dy.out.b")
        s = model.nlg_logprob(toy_pairs[1].mr, toy_pairs[1].text)
        v = len(model.vocab)
        assert len(s.per_token) == len(toy_pairs[1].text) + 1
        np.testing.assert_allclose(s.per_token, -math.log(v), rtol=1e-12)
        assert s.total == pytest.approx(sum(s.per_token), abs=1e-12)
        assert model.auto_text_logprob(toy_pairs[1].text) == pytest.approx(s.total, abs=1e-9)

    def test_uniform_heads(self, model, toy_pairs):
        # each head has [absent] + values + [unk] classes
        zero(model, "dx.w", "dx.b")
        want = -sum(math.log(len(model.schema.slots[s].values) + 2) for s in model.slot_names)
        for p in toy_pairs:
            assert model.nlu_logprob(p.text, p.mr) == pytest.approx(want, abs=1e-12)
            assert model.auto_mr_logprob(p.mr) == pytest.approx(want, abs=1e-12)

    def test_zero_heads_tie_break(self, model, toy_pairs):
        zero(model, "dx.w", "dx.b")
        preds = model.nlu_predict([p.text for p in toy_pairs] + [("anything",)])
        assert all(p == MeaningRepresentation() for p in preds)

    def test_heads_cover_schema(self, model):
        for s in model.slot_names:
            cls = model.classes[s]
            assert cls[0] == ABSENT and cls[-1] == UNK_VALUE
            assert cls[1:-1] == list(model.schema.slots[s].values)

    def test_unseen_value_scores_as_unk(self, model):
        with_unk = parse_mr("name[Nowhere], eatType[pub]")
        assert math.isfinite(model.nlu_logprob(("a", "pub"), with_unk))
        t = model.mr_targets([with_unk])[0]
        j = model.slot_names.index("name")
        assert t[j] == len(model.classes["name"]) - 1

    def test_logprob_bounds_and_normalization(self, model, toy_pairs):
        for p in toy_pairs:
            assert model.nlg_logprob(p.mr, p.text).total < 0
            assert model.nlu_logprob(p.text, p.mr) < 0
            assert model.auto_text_logprob(p.text) < 0
        z = model.encode_mrs([toy_pairs[0].mr]).data
        h, logp = model._decoder_step(np.array([1]), model._decoder_start(z), z)
        assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-9)

    def test_score_batch_matches_single(self, model, toy_pairs):
        mrs, texts = [p.mr for p in toy_pairs], [p.text for p in toy_pairs]
        got = model.score_batch(mrs, texts, chunk=2, threads=2)
        for i, p in enumerate(toy_pairs):
            assert got["nlg"][i] == pytest.approx(model.nlg_logprob(p.mr, p.text).total, abs=1e-10)
            assert got["nlu"][i] == pytest.approx(model.nlu_logprob(p.text, p.mr), abs=1e-10)
            assert got["auto_y"][i] == pytest.approx(model.auto_text_logprob(p.text), abs=1e-10)
            assert got["auto_x"][i] == pytest.approx(model.auto_mr_logprob(p.mr), abs=1e-10)
        with pytest.raises(ValueError):
            model.score_batch(mrs, texts[:1])


class TestDecoding:
    def test_beam_one_is_greedy(self, model, toy_pairs):
        for p in toy_pairs:
            assert model.nlg_generate(p.mr, "beam", k=1) == model.nlg_generate(p.mr, "greedy")

    def test_beam_dominates_greedy(self, model, toy_pairs):
        for p in toy_pairs:
            assert model.nlg_generate(p.mr, "beam", k=3)[1] >= model.nlg_generate(p.mr, "greedy")[1]

    def test_termination_and_sampling(self, model, toy_pairs):
        for seed in range(5):
            toks, score = model.nlg_generate(toy_pairs[0].mr, "sample", k=2, seed=seed)
            assert len(toks) <= TINY.max_decode_len and score <= 0
            assert (toks, score) == model.nlg_generate(toy_pairs[0].mr, "sample", k=2, seed=seed)
        with pytest.raises(ValueError):
            model.nlg_generate(toy_pairs[0].mr, "nucleus")

    def test_prediction_schema_conformant(self, model, toy_pairs):
        for mr in model.nlu_predict([p.text for p in toy_pairs]):
            model.schema.validate(mr)


class TestOverfit:
    def test_greedy_reproduces(self, overfit):
        m, pair = overfit
        assert tuple(m.nlg_generate(pair.mr)[0]) == pair.text

    def test_shuffled_text_scores_lower(self, overfit):
        m, pair = overfit
        shuffled = tuple(np.random.default_rng(0).permutation(pair.text))
        assert m.nlg_logprob(pair.mr, pair.text).total > m.nlg_logprob(pair.mr, shuffled).total

    def test_nlu_recovers_mr(self, overfit):
        m, pair = overfit
        assert m.nlu_predict([pair.text])[0].as_set() == pair.mr.as_set()
        swapped = parse_mr("name[Giraffe], area[city centre]")
        assert m.nlu_logprob(pair.text, pair.mr) > m.nlu_logprob(pair.text, swapped)


def test_autoencoder_beats_random_strings(toy_pairs):
    m = build(toy_pairs)
    texts = [p.text for p in toy_pairs]
    cfg = TrainConfig(lambda_sup=0, lambda_dtd=0, lambda_tdt=0, base_lr=0.01, batch=3, max_steps=200)
    train(m, cfg, pools=Pools([p.mr for p in toy_pairs], texts))
    rng = np.random.default_rng(0)
    words = m.vocab.itos[4:]
    rand = [tuple(rng.choice(words, len(t))) for t in texts]
    assert np.mean([m.auto_text_logprob(t) for t in texts]) > np.mean([m.auto_text_logprob(t) for t in rand])
    assert all(m.auto_text_logprob(t) < 0 for t in texts)


def test_parameter_sharing(model, toy_pairs):
    # training NLG alone moves E_x, which AUTO_x reads
    before = [model.auto_mr_logprob(p.mr) for p in toy_pairs]
    nlu_before = [model.nlu_logprob(p.text, p.mr) for p in toy_pairs]
    for _ in range(5):
        model.store.zero_grad()
        with Tape() as tape:
            loss = total(model.text_nll(model.encode_mrs([p.mr for p in toy_pairs]), [p.text for p in toy_pairs]))
        tape.backward(loss)
        adam_step(model.store, base_lr=0.01)
    after = [model.auto_mr_logprob(p.mr) for p in toy_pairs]
    assert not np.allclose(before, after)
    assert nlu_before == [model.nlu_logprob(p.text, p.mr) for p in toy_pairs]


class TestCheckpoint:
    def test_round_trip(self, model, toy_pairs, tmp_path):
        save_model(model, tmp_path / "m.ckpt")
        got = load_model(tmp_path / "m.ckpt")
        assert got.vocab.itos == model.vocab.itos and got.cfg == model.cfg
        p = toy_pairs[0]
        assert got.nlg_logprob(p.mr, p.text) == model.nlg_logprob(p.mr, p.text)

    def test_not_a_model(self, model, tmp_path):
        from dmiforge.kernel import save_checkpoint

        save_checkpoint(model.store, tmp_path / "raw.ckpt")
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "raw.ckpt")
