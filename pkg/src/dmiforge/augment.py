"""MR augmentation by value swapping."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mr import MeaningRepresentation

log = logging.getLogger(__name__)


class AugmentExhaustedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    target_count: int = 1000
    dedup_against_source: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.target_count < 0:
            raise ValueError("target_count must be >= 0")


def swap_augment(
    mrs: Sequence[MeaningRepresentation],
    pools: Mapping[str, Sequence[str]],
    cfg: AugmentConfig,
) -> list[MeaningRepresentation]:
    """Resample every slot value uniformly from its pool, keeping a source MR's slot set.

    Source slot sets are picked uniformly over ``mrs``. If fewer than
    ``cfg.target_count`` distinct MRs exist, all of them are returned and an
    :class:`AugmentExhaustedWarning` is issued.
    """
    for mr in mrs:
        for slot in mr.slots:
            if slot not in pools or not pools[slot]:
                raise KeyError(f"slot {slot!r} missing from value pools")
    if cfg.target_count == 0 or not mrs:
        return []

    slot_sets = sorted({mr.slots for mr in mrs})
    banned = {mr for mr in mrs} if cfg.dedup_against_source else set()
    capacity = sum(math.prod(len(pools[s]) for s in ss) for ss in slot_sets)
    available = capacity - sum(1 for mr in banned)
    rng = np.random.default_rng(cfg.seed)

    if available <= cfg.target_count:
        out = [m for m in _enumerate(slot_sets, pools) if m not in banned]
        if available < cfg.target_count:
            warnings.warn(
                f"only {len(out)} distinct MRs available, {cfg.target_count} requested",
                AugmentExhaustedWarning,
                stacklevel=2,
            )
        return out

    sources = list(mrs)
    seen: set[MeaningRepresentation] = set()
    out: list[MeaningRepresentation] = []
    while len(out) < cfg.target_count:
        src = sources[int(rng.integers(len(sources)))]
        pairs = tuple((s, pools[s][int(rng.integers(len(pools[s])))]) for s in src.slots)
        cand = MeaningRepresentation(pairs)
        if cand in seen or cand in banned:
            continue
        seen.add(cand)
        out.append(cand)
    return out


def _enumerate(slot_sets, pools):
    for ss in slot_sets:
        grids = np.indices([len(pools[s]) for s in ss]).reshape(len(ss), -1).T
        for row in grids:
            yield MeaningRepresentation(tuple((s, pools[s][j]) for s, j in zip(ss, row)))
