"""Corpus BLEU-4, NLU joint accuracy / slot P-R-F1, and run reports."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .mr import MeaningRepresentation, prf

BLEU_EPS = 1e-9


@dataclass(frozen=True)
class BleuReport:
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    bleu: float
    hyp_len: int
    ref_len: int

    @property
    def p1(self) -> float:
        return self.precisions[0]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> BleuReport:
    """Single-reference corpus BLEU-4.

    Clipped n-gram matches and totals are summed over the corpus before
    dividing. Each precision is floored at ``BLEU_EPS`` inside the log; an
    empty hypothesis side gives a brevity penalty (and BLEU) of 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len >= ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    score = bp * math.exp(sum(0.25 * math.log(max(p, BLEU_EPS)) for p in precisions))
    return BleuReport(precisions, bp, score, hyp_len, ref_len)


@dataclass(frozen=True)
class NluReport:
    joint_accuracy: float
    precision: float
    recall: float
    f1: float


def joint_accuracy(pred: Sequence[MeaningRepresentation], gold: Sequence[MeaningRepresentation]) -> float:
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predictions vs {len(gold)} gold MRs")
    if not gold:
        return 0.0
    return sum(p.as_set() == g.as_set() for p, g in zip(pred, gold)) / len(gold)


def slot_prf(
    pred: Sequence[MeaningRepresentation], gold: Sequence[MeaningRepresentation]
) -> tuple[float, float, float]:
    """Micro-averaged slot-value precision/recall/F1 over the corpus."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predictions vs {len(gold)} gold MRs")
    matched = n_pred = n_gold = 0
    for p, g in zip(pred, gold):
        ps, gs = p.as_set(), g.as_set()
        matched += len(ps & gs)
        n_pred += len(ps)
        n_gold += len(gs)
    return prf(matched, n_pred, n_gold)


def nlu_report(pred: Sequence[MeaningRepresentation], gold: Sequence[MeaningRepresentation]) -> NluReport:
    return NluReport(joint_accuracy(pred, gold), *slot_prf(pred, gold))


# ------------------------------------------------------------------ reports


def run_record(
    name: str,
    seed: int,
    config: dict,
    bleu: BleuReport,
    nlu: NluReport,
    steps: dict[str, int],
) -> dict:
    """Metrics record for one run. Wall-clock times are kept out so reports are reproducible."""
    return {
        "run": name,
        "seed": seed,
        "config": config,
        "steps": steps,
        "bleu4": asdict(bleu),
        "nlu": asdict(nlu),
    }


def write_report(record: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


CSV_FIELDS = ["run", "seed", "bleu4", "joint_accuracy", "slot_precision", "slot_recall", "slot_f1"]


def flat_row(record: dict) -> dict:
    return {
        "run": record["run"],
        "seed": record["seed"],
        "bleu4": record["bleu4"]["bleu"],
        "joint_accuracy": record["nlu"]["joint_accuracy"],
        "slot_precision": record["nlu"]["precision"],
        "slot_recall": record["nlu"]["recall"],
        "slot_f1": record["nlu"]["f1"],
    }


def write_sweep_csv(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(flat_row(r))
