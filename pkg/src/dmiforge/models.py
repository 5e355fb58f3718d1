"""Shared-component NLG/NLU model set.

Four components, each owning its own parameters (prefix in brackets):

* MR encoder ``E_x`` [ex.]   - bidirectional GRU over the linearized MR
* text encoder ``E_y`` [ey.] - bidirectional GRU over text tokens
* MR decoder ``D_x`` [dx.]   - one linear classifier per schema slot
* text decoder ``D_y`` [dy.] - GRU language model conditioned on a latent

composed as NLG = D_y.E_x, NLU = D_x.E_y, AUTO_x = D_x.E_x, AUTO_y = D_y.E_y.
Each head classifies over ``[absent] + values + [unk]``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID, Vocabulary
from .kernel import (
    ParamStore,
    Tensor,
    add,
    concat,
    embedding,
    fold_time,
    grouped_xent,
    gru_recurrence,
    linear,
    matmul,
    no_grad,
    reshape,
    softmax_xent,
    take,
    tanh,
)
from .kernel.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .kernel.tensor import gru_forward_np, log_softmax_np
from .mr import MeaningRepresentation, Schema, linearize

COMPONENTS = ("ex", "ey", "dx", "dy")
NLG_SIDE = ("ex", "dy")
NLU_SIDE = ("ey", "dx")
ABSENT = "<absent>"
UNK_VALUE = "<unk>"


@dataclass
class ModelConfig:
    embed_dim: int = 200
    hidden_dim: int = 200
    latent_dim: int = 100
    encoder_layers: int = 2
    max_decode_len: int = 60
    seed: int = 0

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "latent_dim", "encoder_layers", "max_decode_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScoredSequence:
    tokens: tuple[str, ...]
    total: float
    per_token: tuple[float, ...] = field(default=())


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    t = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), t), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), t))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


class ModelSet:
    def __init__(
        self,
        cfg: ModelConfig,
        vocab: Vocabulary,
        schema: Schema,
        store: ParamStore | None = None,
    ):
        self.cfg = cfg
        self.vocab = vocab
        self.schema = schema
        self.slot_names = schema.names
        self.classes = {s: [ABSENT, *schema.slots[s].values, UNK_VALUE] for s in self.slot_names}
        sizes = [len(self.classes[s]) for s in self.slot_names]
        self.offsets = [0, *np.cumsum(sizes).tolist()]
        if store is None:
            store = ParamStore()
            self._init_params(store, np.random.default_rng(cfg.seed))
        self.store = store

    # ------------------------------------------------------------ parameters

    def _init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        c = self.cfg
        v, e, h, l = len(self.vocab), c.embed_dim, c.hidden_dim, c.latent_dim

        def unif(shape, fan):
            k = 1.0 / math.sqrt(fan)
            return rng.uniform(-k, k, size=shape)

        def gru(prefix, n_in):
            store.add(f"{prefix}.w", unif((n_in, 3 * h), h))
            store.add(f"{prefix}.u", unif((h, 3 * h), h))
            store.add(f"{prefix}.bx", unif((3 * h,), h))
            store.add(f"{prefix}.bh", unif((3 * h,), h))

        for enc in ("ex", "ey"):
            store.add(f"{enc}.emb", rng.normal(0.0, 0.1, size=(v, e)))
            for layer in range(c.encoder_layers):
                n_in = e if layer == 0 else 2 * h
                gru(f"{enc}.l{layer}.f", n_in)
                gru(f"{enc}.l{layer}.b", n_in)
            store.add(f"{enc}.out.w", unif((2 * h, l), 2 * h))
            store.add(f"{enc}.out.b", np.zeros(l))
        store.add("dx.w", unif((l, self.offsets[-1]), l))
        store.add("dx.b", np.zeros(self.offsets[-1]))
        store.add("dy.emb", rng.normal(0.0, 0.1, size=(v, e)))
        store.add("dy.init.w", unif((l, h), l))
        store.add("dy.init.b", np.zeros(h))
        gru("dy.gru", e + l)
        store.add("dy.out.w", unif((h, v), h))
        store.add("dy.out.b", np.zeros(v))

    def p(self, name: str) -> Tensor:
        return self.store.params[name]

    def component_params(self, component: str) -> list[str]:
        return [k for k in self.store.params if k.startswith(component + ".")]

    def clone(self) -> "ModelSet":
        return ModelSet(self.cfg, self.vocab, self.schema, self.store.copy())

    # ------------------------------------------------------------ encoding

    def mr_ids(self, mr: MeaningRepresentation) -> list[int]:
        return self.vocab.encode(linearize(mr))

    def text_ids(self, text: Sequence[str]) -> list[int]:
        return self.vocab.encode(text)

    def mr_targets(self, mrs: Sequence[MeaningRepresentation]) -> np.ndarray:
        out = np.zeros((len(mrs), len(self.slot_names)), dtype=np.int64)
        for i, mr in enumerate(mrs):
            d = mr.as_dict()
            for j, slot in enumerate(self.slot_names):
                if slot in d:
                    classes = self.classes[slot]
                    value = d[slot]
                    out[i, j] = classes.index(value) if value in classes[1:-1] else len(classes) - 1
        return out

    def _encode(self, prefix: str, seqs: Sequence[Sequence[int]]) -> Tensor:
        ids, mask = _pad(seqs)
        b, t = ids.shape
        hd = self.cfg.hidden_dim
        zero = Tensor(np.zeros((b, hd)))
        if t == 0:
            final = Tensor(np.zeros((b, 2 * hd)))
        else:
            x = embedding(self.p(f"{prefix}.emb"), ids.T)  # (T, B, E)
            mask_t = mask.T
            for layer in range(self.cfg.encoder_layers):
                flat = reshape(x, (t * b, x.shape[2]))
                outs = []
                for d, rev in (("f", False), ("b", True)):
                    pre = f"{prefix}.l{layer}.{d}"
                    gx = reshape(linear(flat, self.p(f"{pre}.w"), self.p(f"{pre}.bx")), (t, b, 3 * hd))
                    outs.append(gru_recurrence(gx, zero, self.p(f"{pre}.u"), self.p(f"{pre}.bh"), mask_t, rev))
                x = concat(outs, axis=2)
            final = concat([take(outs[0], t - 1), take(outs[1], 0)], axis=1)
        return tanh(linear(final, self.p(f"{prefix}.out.w"), self.p(f"{prefix}.out.b")))

    def encode_mrs(self, mrs: Sequence[MeaningRepresentation]) -> Tensor:
        return self._encode("ex", [self.mr_ids(m) for m in mrs])

    def encode_texts(self, texts: Sequence[Sequence[str]]) -> Tensor:
        return self._encode("ey", [self.text_ids(t) for t in texts])

    # ------------------------------------------------------------ decoders

    def text_nll(self, latent: Tensor, texts: Sequence[Sequence[str]], per_token: bool = False):
        """Teacher-forced NLL of each text (EOS included), shape (B,).

        With ``per_token`` also returns the (T, B) array of token log-probs.
        """
        tgt_seqs = [self.text_ids(t) + [EOS_ID] for t in texts]
        tgt, mask = _pad(tgt_seqs)
        b, t = tgt.shape
        inp = np.full_like(tgt, PAD_ID)
        inp[:, 0] = BOS_ID
        inp[:, 1:] = tgt[:, :-1]
        e = self.cfg.embed_dim
        w = self.p("dy.gru.w")
        h0 = tanh(linear(latent, self.p("dy.init.w"), self.p("dy.init.b")))
        emb = reshape(embedding(self.p("dy.emb"), inp.T), (t * b, e))
        gx = add(
            reshape(linear(emb, take(w, slice(0, e)), self.p("dy.gru.bx")), (t, b, w.shape[1])),
            matmul(latent, take(w, slice(e, None))),
        )
        states = gru_recurrence(gx, h0, self.p("dy.gru.u"), self.p("dy.gru.bh"), mask.T)
        logits = linear(reshape(states, (t * b, self.cfg.hidden_dim)), self.p("dy.out.w"), self.p("dy.out.b"))
        nll = softmax_xent(logits, tgt.T.reshape(-1))
        per_sample = fold_time(nll, mask.T)
        if per_token:
            return per_sample, -(nll.data.reshape(t, b)) * mask.T
        return per_sample

    def mr_nll(self, latent: Tensor, mrs: Sequence[MeaningRepresentation]) -> Tensor:
        logits = linear(latent, self.p("dx.w"), self.p("dx.b"))
        return grouped_xent(logits, self.offsets, self.mr_targets(mrs))

    # ------------------------------------------------------------ scoring

    def nlg_logprob(self, x: MeaningRepresentation, y: Sequence[str]) -> ScoredSequence:
        with no_grad():
            nll, tok = self.text_nll(self.encode_mrs([x]), [y], per_token=True)
        per = tuple(float(v) for v in tok[: len(y) + 1, 0])
        return ScoredSequence(tuple(y), -float(nll.data[0]), per)

    def nlu_logprob(self, y: Sequence[str], x: MeaningRepresentation) -> float:
        with no_grad():
            return -float(self.mr_nll(self.encode_texts([y]), [x]).data[0])

    def auto_text_logprob(self, y: Sequence[str]) -> float:
        with no_grad():
            return -float(self.text_nll(self.encode_texts([y]), [y]).data[0])

    def auto_mr_logprob(self, x: MeaningRepresentation) -> float:
        with no_grad():
            return -float(self.mr_nll(self.encode_mrs([x]), [x]).data[0])

    def score_batch(
        self,
        mrs: Sequence[MeaningRepresentation],
        texts: Sequence[Sequence[str]],
        chunk: int = 64,
        threads: int = 1,
    ) -> dict[str, np.ndarray]:
        """All four log-likelihood terms for aligned (mr, text) lists.

        Work is split into fixed chunks, so results do not depend on ``threads``.
        """
        if len(mrs) != len(texts):
            raise ValueError(f"{len(mrs)} MRs vs {len(texts)} texts")

        def one(i):
            m, t = mrs[i : i + chunk], texts[i : i + chunk]
            with no_grad():
                zx, zy = self.encode_mrs(m), self.encode_texts(t)
                return (
                    -self.text_nll(zx, t).data,
                    -self.mr_nll(zy, m).data,
                    -self.text_nll(zy, t).data,
                    -self.mr_nll(zx, m).data,
                )

        starts = range(0, len(mrs), chunk)
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(one, starts))
        else:
            parts = [one(i) for i in starts]
        keys = ("nlg", "nlu", "auto_y", "auto_x")
        return {k: np.concatenate([p[j] for p in parts]) if parts else np.zeros(0) for j, k in enumerate(keys)}

    # ------------------------------------------------------------ inference

    def nlu_predict(self, texts: Sequence[Sequence[str]], chunk: int = 128) -> list[MeaningRepresentation]:
        """Per-slot argmax; absent and unknown predictions are omitted. Ties go to the lowest index."""
        preds: list[MeaningRepresentation] = []
        with no_grad():
            for i in range(0, len(texts), chunk):
                z = self.encode_texts(texts[i : i + chunk]).data
                logits = z @ self.p("dx.w").data + self.p("dx.b").data
                for row in logits:
                    pairs = []
                    for j, slot in enumerate(self.slot_names):
                        lo, hi = self.offsets[j], self.offsets[j + 1]
                        k = int(np.argmax(row[lo:hi]))
                        if 0 < k < hi - lo - 1:
                            pairs.append((slot, self.classes[slot][k]))
                    preds.append(MeaningRepresentation(tuple(pairs)))
        return preds

    def _decoder_start(self, latent: np.ndarray) -> np.ndarray:
        return np.tanh(latent @ self.p("dy.init.w").data + self.p("dy.init.b").data)

    def _decoder_step(self, tok: np.ndarray, h: np.ndarray, latent: np.ndarray):
        emb = self.p("dy.emb").data[tok]
        x = np.concatenate([emb, latent], axis=1)
        gp = [self.p(f"dy.gru.{k}").data for k in ("w", "u", "bx", "bh")]
        h, _ = gru_forward_np(x, h, *gp)
        logp = log_softmax_np(h @ self.p("dy.out.w").data + self.p("dy.out.b").data)
        return h, logp

    def greedy_batch(self, mrs: Sequence[MeaningRepresentation], chunk: int = 128) -> list[tuple[list[str], float]]:
        out: list[tuple[list[str], float]] = []
        max_len = self.cfg.max_decode_len
        for i in range(0, len(mrs), chunk):
            with no_grad():
                z = self.encode_mrs(mrs[i : i + chunk]).data
            b = z.shape[0]
            h = self._decoder_start(z)
            tok = np.full(b, BOS_ID)
            done = np.zeros(b, dtype=bool)
            score = np.zeros(b)
            seqs: list[list[int]] = [[] for _ in range(b)]
            for _ in range(max_len):
                h, logp = self._decoder_step(tok, h, z)
                tok = np.argmax(logp, axis=1)
                step_lp = logp[np.arange(b), tok]
                score += np.where(done, 0.0, step_lp)
                for r in np.flatnonzero(~done):
                    if tok[r] == EOS_ID:
                        done[r] = True
                    else:
                        seqs[r].append(int(tok[r]))
                if done.all():
                    break
            out.extend((self.vocab.decode(s), float(sc)) for s, sc in zip(seqs, score))
        return out

    def _beam(self, x: MeaningRepresentation, k: int) -> tuple[list[str], float]:
        with no_grad():
            z = self.encode_mrs([x]).data
        h0 = self._decoder_start(z)
        beams = [([], 0.0, h0[0])]
        finished: list[tuple[list[int], float]] = []
        for _ in range(self.cfg.max_decode_len):
            toks = np.array([s[-1] if s else BOS_ID for s, _, _ in beams])
            hs = np.stack([hh for _, _, hh in beams])
            hs, logp = self._decoder_step(toks, hs, np.repeat(z, len(beams), axis=0))
            cands = []
            for bi, (seq, sc, _) in enumerate(beams):
                top = np.argsort(-logp[bi], kind="stable")[:k]
                cands.extend((sc + float(logp[bi, t]), bi, int(t)) for t in top)
            cands.sort(key=lambda c: -c[0])
            beams_next = []
            for sc, bi, t in cands[:k]:
                if t == EOS_ID:
                    finished.append((beams[bi][0], sc))
                else:
                    beams_next.append((beams[bi][0] + [t], sc, hs[bi]))
            beams = beams_next
            if not beams or len(finished) >= k:
                break
        finished.extend((s, sc) for s, sc, _ in beams)
        best_ids, best = max(finished, key=lambda f: f[1])
        return self.vocab.decode(best_ids), best

    def nlg_generate(
        self,
        x: MeaningRepresentation,
        mode: str = "greedy",
        k: int = 3,
        seed: int = 0,
    ) -> tuple[list[str], float]:
        """Decode text for one MR. Returns (tokens, total log-prob).

        ``mode`` is ``greedy``, ``beam`` (width ``k``) or ``sample`` (top-``k``).
        Beam search also considers the greedy hypothesis, so its score never
        falls below greedy's.
        """
        if mode == "greedy" or (mode == "beam" and k == 1):
            return self.greedy_batch([x])[0]
        if mode == "beam":
            greedy = self.greedy_batch([x])[0]
            beam = self._beam(x, k)
            return beam if beam[1] >= greedy[1] else greedy
        if mode == "sample":
            return self._sample(x, k, seed)
        raise ValueError(f"unknown decoding mode {mode!r}")

    def _sample(self, x: MeaningRepresentation, top_k: int, seed: int) -> tuple[list[str], float]:
        rng = np.random.default_rng(seed)
        with no_grad():
            z = self.encode_mrs([x]).data
        h = self._decoder_start(z)
        tok, seq, score = np.array([BOS_ID]), [], 0.0
        for _ in range(self.cfg.max_decode_len):
            h, logp = self._decoder_step(tok, h, z)
            top = np.argsort(-logp[0], kind="stable")[:top_k]
            probs = np.exp(logp[0, top] - logp[0, top].max())
            t = int(top[rng.choice(len(top), p=probs / probs.sum())])
            score += float(logp[0, t])
            if t == EOS_ID:
                break
            seq.append(t)
            tok = np.array([t])
        return self.vocab.decode(seq), score

    def generate_batch(self, mrs: Sequence[MeaningRepresentation], mode: str = "greedy", k: int = 3) -> list[list[str]]:
        if mode == "greedy" or (mode == "beam" and k == 1):
            return [t for t, _ in self.greedy_batch(mrs)]
        return [self.nlg_generate(m, mode, k)[0] for m in mrs]


def save_model(model: ModelSet, path, with_moments: bool = True) -> None:
    """Checkpoint with the model config, vocabulary and schema in the manifest."""
    config = {"model": model.cfg.to_json(), "vocab": model.vocab.itos, "schema": model.schema.to_json()}
    save_checkpoint(model.store, path, model.vocab.hash(), config, with_moments)


def load_model(path) -> ModelSet:
    store, manifest = load_checkpoint(path)
    cfg = manifest.get("config", {})
    if not {"model", "vocab", "schema"} <= cfg.keys():
        raise CheckpointError(f"{path}: not a model checkpoint (manifest lacks model/vocab/schema)")
    vocab = Vocabulary(cfg["vocab"])
    if vocab.hash() != manifest.get("vocab_hash"):
        raise CheckpointError(f"{path}: stored vocabulary does not match its hash")
    model = ModelSet(ModelConfig(**cfg["model"]), vocab, Schema.from_json(cfg["schema"]), store)
    missing = set(ModelSet(model.cfg, vocab, model.schema).store.params) ^ set(store.params)
    if missing:
        raise CheckpointError(f"{path}: parameter set mismatch ({sorted(missing)[:3]} ...)")
    return model

