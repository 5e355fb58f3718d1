"""Dataset types, loaders, vocabulary and splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mr import MeaningRepresentation, MRParseError, linearize, parse_mr, serialize_mr

log = logging.getLogger(__name__)

CLEAN = "clean"
WEAK = "weak"

_TOKEN = re.compile(r"\w+|[^\w\s]")


class DataFormatError(ValueError):
    pass


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, and split punctuation into separate tokens."""
    return tuple(_TOKEN.findall(text.lower()))


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class ParallelPair:
    mr: MeaningRepresentation
    text: tuple[str, ...]
    provenance: str = CLEAN
    id: int = 0
    source: str = ""

    def __post_init__(self):
        if self.provenance not in (CLEAN, WEAK):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not self.text:
            raise ValueError("pair text must be non-empty")


@dataclass
class Dataset:
    pairs: list[ParallelPair] = field(default_factory=list)
    unlabeled_mrs: list[MeaningRepresentation] = field(default_factory=list)
    unlabeled_texts: list[tuple[str, ...]] = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        ids = [p.id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate pair ids in dataset")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def mrs(self) -> list[MeaningRepresentation]:
        return [p.mr for p in self.pairs]


def load_e2e_csv(path: str | Path) -> Dataset:
    """Read an E2E-style CSV (``mr,ref`` columns). Malformed rows are skipped and counted."""
    pairs: list[ParallelPair] = []
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"mr", "ref"} <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: expected columns 'mr,ref', got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            try:
                mr = parse_mr(row["mr"] or "")
                text = tokenize(row["ref"] or "")
                pairs.append(ParallelPair(mr, text, CLEAN, len(pairs)))
            except (MRParseError, ValueError) as exc:
                skipped += 1
                log.warning("%s line %d skipped: %s", path, row_no, exc)
    if skipped:
        log.warning("%s: %d malformed rows skipped", path, skipped)
    return Dataset(pairs, skipped=skipped)


def write_e2e_csv(pairs: Iterable[ParallelPair], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mr", "ref"])
        for p in pairs:
            w.writerow([serialize_mr(p.mr), detokenize(p.text)])


def write_weak_jsonl(pairs: Iterable[ParallelPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            obj = {"mr": serialize_mr(p.mr), "text": detokenize(p.text), "source": p.source, "id": p.id}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_weak_jsonl(path: str | Path) -> list[ParallelPair]:
    pairs: list[ParallelPair] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                mr = parse_mr(obj["mr"])
                text = tokenize(obj["text"])
                pid = int(obj.get("id", len(pairs)))
                pairs.append(ParallelPair(mr, text, WEAK, pid, str(obj.get("source", ""))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {line_no}: {exc}") from exc
    return pairs


def read_mr_lines(path: str | Path) -> list[MeaningRepresentation]:
    with open(path, encoding="utf-8") as fh:
        return [parse_mr(line) for line in fh if line.strip()]


def write_mr_lines(mrs: Iterable[MeaningRepresentation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for mr in mrs:
            fh.write(serialize_mr(mr) + "\n")


PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)


class Vocabulary:
    """Token <-> id bijection. Ids 0..3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            out.append(self.itos[i])
        return out

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def build_vocab(dataset: Dataset, min_freq: int = 1) -> Vocabulary:
    """Slot markers are always kept; words need ``min_freq`` occurrences.

    Ordering is by descending frequency, ties broken lexicographically.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if not dataset.pairs and not dataset.unlabeled_mrs and not dataset.unlabeled_texts:
        raise ValueError("cannot build a vocabulary from an empty dataset")
    counts: Counter[str] = Counter()
    markers: Counter[str] = Counter()
    for mr in [p.mr for p in dataset.pairs] + list(dataset.unlabeled_mrs):
        for tok in linearize(mr):
            (markers if tok.startswith("<slot:") else counts)[tok] += 1
    for text in [p.text for p in dataset.pairs] + list(dataset.unlabeled_texts):
        counts.update(text)
    kept = Counter({t: c for t, c in counts.items() if c >= min_freq})
    kept.update(markers)
    for t in RESERVED:
        kept.pop(t, None)
    ordered = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED) + [t for t, _ in ordered])


def split(dataset: Dataset, fractions: Sequence[float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic shuffled split. Sizes: floor of each share, remainder handed out in order."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(dataset.pairs)
    sizes = [math.floor(f * n) for f in fractions]
    shares = [f * n - s for f, s in zip(fractions, sizes)]
    for i in sorted(range(3), key=lambda j: (-shares[j], j))[: n - sum(sizes)]:
        sizes[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for size in sizes:
        idx = sorted(order[start : start + size].tolist())
        parts.append(Dataset([dataset.pairs[i] for i in idx]))
        start += size
    parts[0].unlabeled_mrs = list(dataset.unlabeled_mrs)
    parts[0].unlabeled_texts = list(dataset.unlabeled_texts)
    return parts[0], parts[1], parts[2]


def value_pools(mrs: Iterable[MeaningRepresentation]) -> dict[str, list[str]]:
    pools: dict[str, set[str]] = {}
    for mr in mrs:
        for slot, value in mr.pairs:
            pools.setdefault(slot, set()).add(value)
    return {s: sorted(v) for s, v in sorted(pools.items())}


def relabel(pairs: Iterable[ParallelPair], start: int = 0, **changes) -> list[ParallelPair]:
    """Copy pairs with fresh consecutive ids (and optional field overrides)."""
    return [replace(p, id=start + i, **changes) for i, p in enumerate(pairs)]
