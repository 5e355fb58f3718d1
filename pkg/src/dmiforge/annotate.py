"""Weak labelling of unlabeled MRs and the NLU consistency filter.

The built-in annotator delexicalizes the clean pairs into per-slot fragments,
realizes new MRs from them, and corrupts the result according to a
:class:`NoiseConfig`. Any other labeller (for instance a fine-tuned language
model) can be attached by writing weak-label JSONL and calling
:func:`ingest_external`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .corpus import WEAK, ParallelPair, load_weak_jsonl, tokenize
from .mr import MeaningRepresentation, slot_fscore
from .synth import CONJUNCTION, SEPARATOR, TERMINATOR, join_phrases

log = logging.getLogger(__name__)

_BOUNDARIES = {SEPARATOR, CONJUNCTION, TERMINATOR}
EMPTY_TEXT = ("it", "is", "a", "place", ".")


class Annotator(Protocol):
    def annotate(self, mr: MeaningRepresentation, seed: int) -> tuple[str, ...]: ...


def placeholder(slot: str) -> str:
    return f"<{slot}>"


@dataclass(frozen=True)
class NoiseConfig:
    """Corruption rates. ``p_drop`` is per slot, ``p_hallucinate`` per text, ``p_lexical`` per word token.

    ``pair_rate`` is the probability that a text is exposed to noise at all.
    """

    p_drop: float = 0.0
    p_hallucinate: float = 0.0
    p_lexical: float = 0.0
    seed: int = 0
    pair_rate: float = 1.0

    def __post_init__(self):
        for name in ("p_drop", "p_hallucinate", "p_lexical", "pair_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class TemplateBank:
    fragments: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)
    scaffold: tuple[str, str, str] = (SEPARATOR, CONJUNCTION, TERMINATOR)
    pools: dict[str, list[str]] = field(default_factory=dict)
    words: list[str] = field(default_factory=list)

    def covers(self, slots: Sequence[str]) -> bool:
        return all(s in self.fragments for s in slots)

    def fragment_for(self, slot: str, rng: np.random.Generator) -> tuple[str, ...]:
        frags = self.fragments.get(slot) or [fallback_fragment(slot)]
        return frags[int(rng.integers(len(frags)))] if len(frags) > 1 else frags[0]


def fallback_fragment(slot: str) -> tuple[str, ...]:
    return ("the", *tokenize(slot), "is", placeholder(slot))


def delexicalize(mr: MeaningRepresentation, text: Sequence[str]) -> tuple[list[str], set[str]]:
    """Replace every occurrence of each slot value's token span with the slot placeholder."""
    toks = list(text)
    found: set[str] = set()
    for slot, value in sorted(mr.pairs, key=lambda p: -len(tokenize(p[1]))):
        span = list(tokenize(value))
        if not span:
            continue
        i = 0
        while i + len(span) <= len(toks):
            if toks[i : i + len(span)] == span:
                toks[i : i + len(span)] = [placeholder(slot)]
                found.add(slot)
            i += 1
    return toks, found


def _chunks(tokens: Sequence[str]) -> list[list[str]]:
    out, cur = [], []
    for t in tokens:
        if t in _BOUNDARIES:
            if cur:
                out.append(cur)
            cur = []
        else:
            cur.append(t)
    if cur:
        out.append(cur)
    return out


def extract_templates(
    clean_pairs: Sequence[ParallelPair], pools: Mapping[str, Sequence[str]] | None = None
) -> TemplateBank:
    """Build per-slot fragments from clean pairs; slots never realized get fallback fragments."""
    if not clean_pairs:
        raise ValueError("template extraction needs at least one clean pair")
    frags: dict[str, set[tuple[str, ...]]] = {}
    words: set[str] = set()
    all_slots: set[str] = set()
    for p in clean_pairs:
        all_slots.update(p.mr.slots)
        delex, _ = delexicalize(p.mr, p.text)
        for chunk in _chunks(delex):
            holders = [t for t in chunk if t.startswith("<") and t.endswith(">")]
            if len(holders) == 1:
                frags.setdefault(holders[0][1:-1], set()).add(tuple(chunk))
            words.update(t for t in chunk if not (t.startswith("<") and t.endswith(">")))
    merged_pools = {s: sorted(set(v)) for s, v in (pools or {}).items()}
    for p in clean_pairs:
        for s, v in p.mr.pairs:
            merged_pools.setdefault(s, [])
            if v not in merged_pools[s]:
                merged_pools[s] = sorted(set(merged_pools[s]) | {v})
    all_slots.update(merged_pools)
    fragments = {s: sorted(frags[s]) if s in frags else [fallback_fragment(s)] for s in sorted(all_slots)}
    for s in fragments:
        if s not in frags:
            log.info("slot %r has no delexicalized fragment, using fallback", s)
            words.update(t for t in fallback_fragment(s)[:-1])
    for vals in merged_pools.values():
        for v in vals:
            words.update(tokenize(v))
    return TemplateBank(
        fragments=fragments,
        pools=merged_pools,
        words=sorted(words),
    )


def _fill(fragment: Sequence[str], slot: str, value: str) -> list[str]:
    out = []
    for t in fragment:
        if t == placeholder(slot):
            out.extend(tokenize(value))
        else:
            out.append(t)
    return out


class TemplateAnnotator:
    """Template realization plus drop / hallucinate / lexical corruption."""

    def __init__(self, bank: TemplateBank, noise: NoiseConfig = NoiseConfig()):
        self.bank = bank
        self.noise = noise

    def annotate(self, mr: MeaningRepresentation, seed: int) -> tuple[str, ...]:
        rng = np.random.default_rng([self.noise.seed, seed])
        noise = self.noise
        exposed = rng.random() < noise.pair_rate
        phrases = []
        for slot, value in mr.pairs:
            frag = self.bank.fragment_for(slot, rng)
            drop = rng.random() < noise.p_drop
            if not (exposed and drop):
                phrases.append(_fill(frag, slot, value))
        if exposed and rng.random() < noise.p_hallucinate:
            extra = self._hallucination(mr, rng)
            if extra is not None:
                phrases.insert(int(rng.integers(len(phrases) + 1)), extra)
        tokens = join_phrases(phrases, self.bank.scaffold) if phrases else list(EMPTY_TEXT)
        if exposed and noise.p_lexical > 0 and self.bank.words:
            for i, t in enumerate(tokens):
                if t not in _BOUNDARIES and rng.random() < noise.p_lexical:
                    choices = [w for w in self.bank.words if w != t]
                    if choices:
                        tokens[i] = choices[int(rng.integers(len(choices)))]
        return tuple(tokens)

    def _hallucination(self, mr: MeaningRepresentation, rng: np.random.Generator) -> list[str] | None:
        present = mr.as_dict()
        missing = [s for s in self.bank.pools if s not in present and self.bank.pools[s]]
        if missing:
            slot = missing[int(rng.integers(len(missing)))]
            value = self.bank.pools[slot][int(rng.integers(len(self.bank.pools[slot])))]
        else:
            options = [(s, v) for s in present for v in self.bank.pools.get(s, []) if v != present[s]]
            if not options:
                return None
            slot, value = options[int(rng.integers(len(options)))]
        return _fill(self.bank.fragment_for(slot, rng), slot, value)


def annotate(
    mrs: Sequence[MeaningRepresentation],
    bank: TemplateBank | Annotator,
    noise: NoiseConfig = NoiseConfig(),
    start_id: int = 0,
) -> list[ParallelPair]:
    """Weak pairs for ``mrs``; item ``i`` is annotated with seed ``i`` (deterministic)."""
    ann = TemplateAnnotator(bank, noise) if isinstance(bank, TemplateBank) else bank
    source = "template" if isinstance(ann, TemplateAnnotator) else type(ann).__name__
    out = []
    for i, mr in enumerate(mrs):
        text = tuple(ann.annotate(mr, i))
        if not text:
            raise ValueError(f"annotator returned empty text for {mr}")
        out.append(ParallelPair(mr, text, WEAK, start_id + i, source))
    return out


def ingest_external(path) -> list[ParallelPair]:
    """Weak labels produced outside this package (e.g. by a fine-tuned LM)."""
    return load_weak_jsonl(path)


@dataclass
class FilterOutcome:
    kept: list[ParallelPair]
    rejected: list[ParallelPair]
    scores: np.ndarray
    histogram: list[int]

    @property
    def rejected_texts(self) -> list[tuple[str, ...]]:
        return [p.text for p in self.rejected]

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)


def filter_consistency(
    weak_pairs: Sequence[ParallelPair], nlu, threshold: float = 0.7, bins: int = 10
) -> FilterOutcome:
    """Keep weak pairs whose NLU-predicted MR has slot F-score >= ``threshold`` against the paired MR.

    ``nlu`` needs an ``nlu_predict(texts) -> list[MR]`` method; a trained
    :class:`~dmiforge.models.ModelSet` qualifies.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if not hasattr(nlu, "nlu_predict"):
        raise TypeError(f"{type(nlu).__name__} cannot predict MRs")
    preds = nlu.nlu_predict([p.text for p in weak_pairs]) if weak_pairs else []
    scores = np.array([slot_fscore(pr, p.mr).f1 for pr, p in zip(preds, weak_pairs)])
    kept = [p for p, s in zip(weak_pairs, scores) if s >= threshold]
    rejected = [p for p, s in zip(weak_pairs, scores) if s < threshold]
    hist, _ = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    return FilterOutcome(kept, rejected, scores, hist.tolist())


class OracleNLU:
    """Wraps a ground-truth text parser (e.g. :meth:`Grammar.parse`) as an NLU."""

    def __init__(self, parse):
        self.parse = parse

    def nlu_predict(self, texts):
        return [self.parse(t) for t in texts]
