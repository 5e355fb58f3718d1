"""Closed-vocabulary benchmark grammar with an exact realizer and inverse parser.

Every value word is unique across slots, so the inverse simply reads the value
words present in a text. This makes it an oracle NLU for measuring true label
corruption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CLEAN, Dataset, ParallelPair
from .mr import MeaningRepresentation

# (slot, phrase pattern, value words)
_SLOTS = [
    ("name", "{v} is a venue", ["alimentum", "bibimbap", "cotto", "zizzi", "aromi", "strada", "wildwood", "giraffe"]),
    ("food", "serving {v} food", ["chinese", "french", "indian", "italian", "japanese", "english", "thai", "greek"]),
    ("area", "in the {v} area", ["riverside", "centre", "harbour", "uptown", "suburbs", "docklands", "old_town", "campus"]),
    ("pricerange", "with {v} prices", ["cheap", "moderate", "high", "budget", "premium", "average", "steep", "fair"]),
    ("rating", "rated {v} by customers", ["low", "decent", "excellent", "poor", "stellar", "mixed", "solid", "mediocre"]),
    ("eattype", "of the {v} kind", ["pub", "cafe", "diner", "bistro", "canteen", "tavern", "buffet", "bar"]),
    ("near", "close to the {v}", ["bakery", "museum", "station", "cinema", "library", "market", "stadium", "park"]),
    ("family", "that is {v} for kids", ["friendly", "unsuitable", "welcoming", "hostile", "ideal", "okay", "great", "bad"]),
]

SEPARATOR = ","
CONJUNCTION = "and"
TERMINATOR = "."


@dataclass(frozen=True)
class SynthSpec:
    n_slots: int = 5
    values_per_slot: int = 4
    n_clean: int = 400
    n_unlabeled_mrs: int = 2000
    seed: int = 0


class Grammar:
    """Ground-truth realization and its inverse for a synthetic benchmark."""

    def __init__(self, n_slots: int, values_per_slot: int):
        self.slots: list[str] = []
        self.patterns: dict[str, list[str]] = {}
        self.values: dict[str, list[str]] = {}
        for i in range(n_slots):
            if i < len(_SLOTS):
                name, pattern, words = _SLOTS[i]
            else:
                name, pattern, words = f"slot{i}", f"where slot{i} is {{v}}", []
            vals = [words[j] if j < len(words) else f"{name}v{j}" for j in range(values_per_slot)]
            self.slots.append(name)
            self.patterns[name] = pattern.split(" ")
            self.values[name] = vals
        self.word_to_pair = {v: (s, v) for s in self.slots for v in self.values[s]}

    @property
    def space_size(self) -> int:
        v = len(next(iter(self.values.values())))
        return (v + 1) ** len(self.slots) - 1

    def mr_from_index(self, index: int) -> MeaningRepresentation:
        base = len(self.values[self.slots[0]]) + 1
        pairs = []
        for slot in self.slots:
            index, digit = divmod(index, base)
            if digit:
                pairs.append((slot, self.values[slot][digit - 1]))
        return MeaningRepresentation(tuple(pairs))

    def phrase(self, slot: str, value: str) -> list[str]:
        return [value if w == "{v}" else w for w in self.patterns[slot]]

    def realize(self, mr: MeaningRepresentation) -> tuple[str, ...]:
        phrases = [self.phrase(s, v) for s, v in mr.pairs]
        return tuple(join_phrases(phrases))

    def parse(self, text) -> MeaningRepresentation:
        seen: dict[str, str] = {}
        for tok in text:
            if tok in self.word_to_pair:
                slot, value = self.word_to_pair[tok]
                seen.setdefault(slot, value)
        return MeaningRepresentation(tuple((s, seen[s]) for s in self.slots if s in seen))


def join_phrases(phrases: list[list[str]], scaffold=(SEPARATOR, CONJUNCTION, TERMINATOR)) -> list[str]:
    """``p1 , p2 , ... and pn .`` scaffold shared by the grammar and the template annotator."""
    sep, conj, end = scaffold
    out: list[str] = []
    for i, ph in enumerate(phrases):
        if i > 0:
            out.append(conj if i == len(phrases) - 1 else sep)
        out.extend(ph)
    out.append(end)
    return out


def _draw_indices(rng: np.random.Generator, space: int, count: int) -> list[int]:
    if space <= 1_000_000:
        return (rng.choice(space, size=count, replace=False) + 1).tolist()
    seen: dict[int, None] = {}
    while len(seen) < count:
        seen.setdefault(int(rng.integers(1, space + 1)), None)
    return list(seen)


def synth_benchmark(spec: SynthSpec) -> tuple[Dataset, Grammar]:
    """Clean pairs use the exact realization; unlabeled MRs are distinct from them."""
    for name in ("n_slots", "values_per_slot", "n_clean", "n_unlabeled_mrs"):
        if getattr(spec, name) < 1:
            raise ValueError(f"{name} must be >= 1")
    grammar = Grammar(spec.n_slots, spec.values_per_slot)
    total = spec.n_clean + spec.n_unlabeled_mrs
    if total > grammar.space_size:
        raise ValueError(f"requested {total} MRs but only {grammar.space_size} distinct MRs exist")
    rng = np.random.default_rng(spec.seed)
    idx = _draw_indices(rng, grammar.space_size, total)
    mrs = [grammar.mr_from_index(i) for i in idx]
    pairs = [ParallelPair(mr, grammar.realize(mr), CLEAN, i) for i, mr in enumerate(mrs[: spec.n_clean])]
    return Dataset(pairs, unlabeled_mrs=mrs[spec.n_clean :]), grammar
