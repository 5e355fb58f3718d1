"""Meaning representations: parsing, canonical serialization, linearization, slot matching."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

_WS = re.compile(r"\s+")


class MRParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DuplicateSlotWarning(UserWarning):
    pass


def normalize(text: str) -> str:
    return _WS.sub(" ", text.strip().lower())


@dataclass(frozen=True)
class MeaningRepresentation:
    """Ordered, duplicate-free slot/value pairs. Construct via :meth:`from_pairs` to normalize."""

    pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        seen = set()
        for slot, value in self.pairs:
            if not slot or not value:
                raise ValueError("slot names and values must be non-empty")
            if slot in seen:
                raise ValueError(f"duplicate slot {slot!r}")
            seen.add(slot)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "MeaningRepresentation":
        out: list[tuple[str, str]] = []
        seen: set[str] = set()
        for slot, value in pairs:
            slot, value = normalize(slot), normalize(value)
            if slot in seen:
                warnings.warn(f"duplicate slot {slot!r} ignored", DuplicateSlotWarning, stacklevel=2)
                continue
            seen.add(slot)
            out.append((slot, value))
        return cls(tuple(out))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.pairs)

    def __str__(self) -> str:
        return serialize_mr(self)

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.pairs)

    def as_dict(self) -> dict[str, str]:
        return dict(self.pairs)

    def as_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.pairs)


def parse_mr(source: str) -> MeaningRepresentation:
    """Parse the E2E ``slot[value], slot[value]`` format.

    Duplicate slot names keep the first occurrence and emit a
    :class:`DuplicateSlotWarning`. Malformed input raises :class:`MRParseError`
    carrying the UTF-8 byte offset of the problem.
    """
    def offset(i: int) -> int:
        return len(source[:i].encode("utf-8"))

    pairs: list[tuple[str, str]] = []
    i, n = 0, len(source)
    while i < n:
        while i < n and source[i].isspace():
            i += 1
        if i >= n:
            break
        start = i
        while i < n and source[i] not in "[],":
            i += 1
        if i >= n or source[i] != "[":
            raise MRParseError("expected '[' after slot name", offset(i))
        slot = normalize(source[start:i])
        if not slot:
            raise MRParseError("empty slot name", offset(start))
        open_at = i
        i += 1
        vstart = i
        while i < n and source[i] not in "[]":
            i += 1
        if i >= n or source[i] != "]":
            raise MRParseError("unclosed '['", offset(open_at))
        value = normalize(source[vstart:i])
        if not value:
            raise MRParseError(f"empty value for slot {slot!r}", offset(vstart))
        pairs.append((slot, value))
        i += 1
        while i < n and source[i].isspace():
            i += 1
        if i < n:
            if source[i] != ",":
                raise MRParseError("expected ',' between entries", offset(i))
            i += 1
            if not source[i:].strip():
                raise MRParseError("trailing ','", offset(i - 1))
    return MeaningRepresentation.from_pairs(pairs)


def serialize_mr(mr: MeaningRepresentation) -> str:
    return ", ".join(f"{slot}[{value}]" for slot, value in mr.pairs)


def slot_marker(slot: str) -> str:
    return f"<slot:{slot}>"


def linearize(mr: MeaningRepresentation) -> list[str]:
    tokens: list[str] = []
    for slot, value in mr.pairs:
        tokens.append(slot_marker(slot))
        tokens.extend(value.split(" "))
    return tokens


@dataclass(frozen=True)
class MatchReport:
    precision: float
    recall: float
    f1: float
    matched: int
    pred_only: int
    gold_only: int


def prf(matched: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def slot_fscore(pred: MeaningRepresentation, gold: MeaningRepresentation) -> MatchReport:
    """A pair matches when both slot name and value agree exactly."""
    p_set, g_set = pred.as_set(), gold.as_set()
    matched = len(p_set & g_set)
    p, r, f = prf(matched, len(p_set), len(g_set))
    return MatchReport(p, r, f, matched, len(p_set) - matched, len(g_set) - matched)


@dataclass(frozen=True)
class SlotSpec:
    values: tuple[str, ...]
    open: bool = False


@dataclass(frozen=True)
class Schema:
    slots: Mapping[str, SlotSpec] = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.slots))

    def validate(self, mr: MeaningRepresentation) -> None:
        for slot, value in mr.pairs:
            if slot not in self.slots:
                raise ValueError(f"slot {slot!r} not in schema")
            spec = self.slots[slot]
            if not spec.open and value not in spec.values:
                raise ValueError(f"value {value!r} not allowed for closed slot {slot!r}")

    def to_json(self) -> dict:
        return {k: {"values": list(v.values), "open": v.open} for k, v in sorted(self.slots.items())}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Schema":
        return cls({k: SlotSpec(tuple(v["values"]), bool(v["open"])) for k, v in obj.items()})


def schema_from_corpus(mrs: Sequence[MeaningRepresentation], open_threshold: int = 50) -> Schema:
    """Collect observed values per slot; slots with more than ``open_threshold`` values are open."""
    if not mrs:
        raise ValueError("cannot build a schema from an empty corpus")
    values: dict[str, set[str]] = {}
    for mr in mrs:
        for slot, value in mr.pairs:
            values.setdefault(slot, set()).add(value)
    return Schema({s: SlotSpec(tuple(sorted(v)), len(v) > open_threshold) for s, v in sorted(values.items())})
