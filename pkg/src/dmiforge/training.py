"""Dual-learning objectives, DMI quality scores and the two-step schedule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import ParallelPair
from .kernel import NonFiniteError, Tape, Tensor, adam_step, add, concat, no_grad, scale, sgd_step, take, weighted_sum
from .models import ModelSet
from .mr import MeaningRepresentation

log = logging.getLogger(__name__)

MAX_LOG_DMI = 700.0  # exp() overflows float64 just above 709


@dataclass
class TrainConfig:
    base_lr: float = 0.0002
    batch: int = 28
    max_steps: int = 10000
    patience: int = 100
    eval_every: int = 10
    lambda_sup: float = 1.0
    lambda_dtd: float = 1.0
    lambda_tdt: float = 1.0
    lambda_ae: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    # "weights": divide the weighted supervised sum by sum(w); "count": by batch size
    weight_norm: str = "weights"
    restore_best: bool = True
    dmi_length_norm: bool = False
    dmi_normalization: str = "minmax"

    def __post_init__(self):
        for name in ("lambda_sup", "lambda_dtd", "lambda_tdt", "lambda_ae"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ValueError("batch and eval_every must be >= 1, max_steps >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_norm not in ("weights", "count"):
            raise ValueError(f"unknown weight_norm {self.weight_norm!r}")
        if self.dmi_normalization not in ("minmax", "rank"):
            raise ValueError(f"unknown dmi_normalization {self.dmi_normalization!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class Pools:
    """Unpaired data for the unsupervised objectives."""

    mrs: list[MeaningRepresentation] = field(default_factory=list)
    texts: list[tuple[str, ...]] = field(default_factory=list)


# ------------------------------------------------------------------ objectives


def loss_supervised(
    model: ModelSet,
    pairs: Sequence[ParallelPair],
    weights: Sequence[float] | None = None,
    norm: str = "weights",
) -> Tensor | None:
    """Weighted joint NLL ``-sum w_i [log p(y|x) + log p(x|y)] / sum w_i``. None when sum(w) == 0."""
    w = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(pairs) == 0 or w.sum() == 0:
        return None
    if (w < 0).any() or (w > 1).any():
        raise ValueError("sample weights must lie in [0, 1]")
    mrs = [p.mr for p in pairs]
    texts = [p.text for p in pairs]
    nll = add(model.text_nll(model.encode_mrs(mrs), texts), model.mr_nll(model.encode_texts(texts), mrs))
    denom = w.sum() if norm == "weights" else float(len(pairs))
    return scale(weighted_sum(nll, w), 1.0 / denom)


def _mean(x: Tensor) -> Tensor:
    return scale(weighted_sum(x, np.ones(x.shape)), 1.0 / x.shape[0])


def loss_dtd(model: ModelSet, mrs: Sequence[MeaningRepresentation]) -> Tensor | None:
    """x -> y' -> x. The pseudo text comes from greedy NLG with gradients stopped."""
    if not mrs:
        return None
    pseudo = [tuple(t) for t, _ in model.greedy_batch(mrs)]
    return _mean(model.mr_nll(model.encode_texts(pseudo), mrs))


def loss_tdt(model: ModelSet, texts: Sequence[Sequence[str]]) -> Tensor | None:
    """y -> x' -> y (back translation). The pseudo MR comes from NLU argmax with gradients stopped."""
    if not texts:
        return None
    pseudo = model.nlu_predict(texts)
    return _mean(model.text_nll(model.encode_mrs(pseudo), texts))


def loss_auto(
    model: ModelSet, mrs: Sequence[MeaningRepresentation], texts: Sequence[Sequence[str]]
) -> Tensor | None:
    terms = []
    if mrs:
        terms.append(_mean(model.mr_nll(model.encode_mrs(mrs), mrs)))
    if texts:
        terms.append(_mean(model.text_nll(model.encode_texts(texts), texts)))
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else add(terms[0], terms[1])


def objective(
    model: ModelSet,
    cfg: TrainConfig,
    pairs: Sequence[ParallelPair],
    weights: Sequence[float] | None,
    mrs: Sequence[MeaningRepresentation],
    texts: Sequence[Sequence[str]],
) -> Tensor | None:
    """``lam_sup*Eq4 + lam_dtd*Eq1 + lam_tdt*Eq2 + lam_ae*Eq3`` for one step's batches.

    Equal to the sum of :func:`loss_supervised`, :func:`loss_dtd`,
    :func:`loss_tdt` and :func:`loss_auto`, but each of the four components
    runs once over the concatenation of every objective's inputs.
    """
    mr_in: list[MeaningRepresentation] = []  # through E_x
    text_in: list[Sequence[str]] = []  # through E_y
    y_rows: list[tuple[str, int]] = []  # (latent source, row) feeding D_y
    y_targets: list[Sequence[str]] = []
    y_coef: list[float] = []
    x_rows: list[tuple[str, int]] = []
    x_targets: list[MeaningRepresentation] = []
    x_coef: list[float] = []

    if cfg.lambda_sup and pairs:
        w = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=np.float64)
        if (w < 0).any() or (w > 1).any():
            raise ValueError("sample weights must lie in [0, 1]")
        if w.sum() > 0:
            denom = w.sum() if cfg.weight_norm == "weights" else float(len(pairs))
            for p, wi in zip(pairs, w):
                k = cfg.lambda_sup * wi / denom
                y_rows.append(("x", len(mr_in)))
                y_targets.append(p.text)
                y_coef.append(k)
                x_rows.append(("y", len(text_in)))
                x_targets.append(p.mr)
                x_coef.append(k)
                mr_in.append(p.mr)
                text_in.append(p.text)
    if cfg.lambda_dtd and mrs:
        pseudo = [tuple(t) for t, _ in model.greedy_batch(mrs)]
        for mr, y in zip(mrs, pseudo):
            x_rows.append(("y", len(text_in)))
            x_targets.append(mr)
            x_coef.append(cfg.lambda_dtd / len(mrs))
            text_in.append(y)
    if cfg.lambda_tdt and texts:
        pseudo_mrs = model.nlu_predict(texts)
        for y, mr in zip(texts, pseudo_mrs):
            y_rows.append(("x", len(mr_in)))
            y_targets.append(y)
            y_coef.append(cfg.lambda_tdt / len(texts))
            mr_in.append(mr)
    if cfg.lambda_ae:
        for mr in mrs:
            x_rows.append(("x", len(mr_in)))
            x_targets.append(mr)
            x_coef.append(cfg.lambda_ae / len(mrs))
            mr_in.append(mr)
        for y in texts:
            y_rows.append(("y", len(text_in)))
            y_targets.append(y)
            y_coef.append(cfg.lambda_ae / len(texts))
            text_in.append(y)
    if not y_rows and not x_rows:
        return None

    latents = {}
    if mr_in:
        latents["x"] = model.encode_mrs(mr_in)
    if text_in:
        latents["y"] = model.encode_texts(text_in)

    def gather(rows):
        # rows are grouped by source in contiguous runs
        parts, i = [], 0
        while i < len(rows):
            src, start = rows[i]
            j = i
            while j + 1 < len(rows) and rows[j + 1][0] == src and rows[j + 1][1] == rows[j][1] + 1:
                j += 1
            parts.append(take(latents[src], slice(start, rows[j][1] + 1)))
            i = j + 1
        return parts[0] if len(parts) == 1 else concat(parts, axis=0)

    terms = []
    if y_rows:
        terms.append(weighted_sum(model.text_nll(gather(y_rows), y_targets), np.array(y_coef)))
    if x_rows:
        terms.append(weighted_sum(model.mr_nll(gather(x_rows), x_targets), np.array(x_coef)))
    return terms[0] if len(terms) == 1 else add(terms[0], terms[1])


# ------------------------------------------------------------------ schedule


class _Cycler:
    """Round-robin batches over a list, reshuffled every epoch."""

    def __init__(self, n: int, rng: np.random.Generator, indices: Sequence[int] | None = None):
        self.base = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64)
        self.rng = rng
        self.order = np.zeros(0, dtype=np.int64)
        self.pos = 0

    def __bool__(self) -> bool:
        return len(self.base) > 0

    def next(self, k: int) -> list[int]:
        out: list[int] = []
        if not len(self.base):
            return out
        while len(out) < k:
            if self.pos >= len(self.order):
                self.order = self.base[self.rng.permutation(len(self.base))]
                self.pos = 0
            take = min(k - len(out), len(self.order) - self.pos)
            out.extend(self.order[self.pos : self.pos + take].tolist())
            self.pos += take
            if len(self.base) < k and len(out) >= len(self.base):
                break
        return out


@dataclass
class TrainResult:
    steps: int = 0
    best_step: int = 0
    best_dev: float = math.inf
    stopped_early: bool = False
    history: list[float] = field(default_factory=list)
    dev_history: list[tuple[int, float]] = field(default_factory=list)
    seconds: float = 0.0


def dev_loss(model: ModelSet, pairs: Sequence[ParallelPair], chunk: int = 64) -> float:
    if not pairs:
        return math.nan
    tot = 0.0
    with no_grad():
        for i in range(0, len(pairs), chunk):
            loss = loss_supervised(model, pairs[i : i + chunk])
            tot += loss.item() * len(pairs[i : i + chunk])
    return tot / len(pairs)


def train(
    model: ModelSet,
    cfg: TrainConfig,
    pairs: Sequence[ParallelPair] = (),
    weights: Sequence[float] | None = None,
    pools: Pools | None = None,
    dev: Sequence[ParallelPair] = (),
    max_steps: int | None = None,
) -> TrainResult:
    """Optimize ``model`` in place; one optimizer step per batch triple.

    Pairs with zero weight are never sampled, so a zero-weighted pair leaves the
    trajectory exactly as if it were absent. With a dev set the loop stops after
    ``patience`` evaluations without improvement and restores the best
    parameters.
    """
    pools = pools or Pools()
    steps = cfg.max_steps if max_steps is None else max_steps
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    ss = np.random.SeedSequence(cfg.seed)
    r_pairs, r_mrs, r_texts = (np.random.default_rng(s) for s in ss.spawn(3))
    live = None if w is None else np.flatnonzero(w > 0)
    pair_cyc = _Cycler(len(pairs), r_pairs, live)
    mr_cyc = _Cycler(len(pools.mrs), r_mrs)
    text_cyc = _Cycler(len(pools.texts), r_texts)
    step_fn = adam_step if cfg.optimizer == "adam" else sgd_step

    res = TrainResult()
    best = model.store.snapshot()
    bad_evals = 0
    t0 = time.perf_counter()
    for step in range(1, steps + 1):
        idx = pair_cyc.next(cfg.batch) if cfg.lambda_sup else []
        batch_pairs = [pairs[i] for i in idx]
        batch_w = None if w is None else w[idx]
        batch_mrs = [pools.mrs[i] for i in mr_cyc.next(cfg.batch)] if (cfg.lambda_dtd or cfg.lambda_ae) else []
        batch_texts = (
            [pools.texts[i] for i in text_cyc.next(cfg.batch)] if (cfg.lambda_tdt or cfg.lambda_ae) else []
        )
        model.store.zero_grad()
        with Tape() as tape:
            loss = objective(model, cfg, batch_pairs, batch_w, batch_mrs, batch_texts)
            if loss is None:
                break
            tape.backward(loss)
        if not math.isfinite(loss.item()):
            raise NonFiniteError(f"non-finite training loss at step {step}")
        step_fn(model.store, base_lr=cfg.base_lr)
        res.history.append(loss.item())
        res.steps = step
        if dev and step % cfg.eval_every == 0:
            d = dev_loss(model, dev)
            res.dev_history.append((step, d))
            if d < res.best_dev:
                res.best_dev, res.best_step, bad_evals = d, step, 0
                best = model.store.snapshot()
            else:
                bad_evals += 1
                if bad_evals >= cfg.patience:
                    res.stopped_early = True
                    break
    if dev and cfg.restore_best and res.best_step:
        model.store.restore(best)
    res.seconds = time.perf_counter() - t0
    log.debug("trained %d steps (best dev %.4f at %d)", res.steps, res.best_dev, res.best_step)
    return res


# ------------------------------------------------------------------ DMI


@dataclass
class DmiScore:
    mi_xy: float
    mi_yx: float
    dmi: float
    c: float | None = None
    id: int = 0

    @property
    def gap(self) -> float:
        return abs(self.mi_xy - self.mi_yx)


def dmi_from_terms(
    log_auto_y: float, log_nlg: float, log_auto_x: float, log_nlu: float, id: int = 0
) -> DmiScore:
    mi_xy = log_auto_y - log_nlg
    mi_yx = log_auto_x - log_nlu
    return DmiScore(mi_xy, mi_yx, math.exp(min(abs(mi_xy - mi_yx), MAX_LOG_DMI)), id=id)


def dmi_scores(
    teacher: ModelSet, pairs: Sequence[ParallelPair], length_norm: bool = False, threads: int = 1
) -> list[DmiScore]:
    """Teacher-side MI estimates for each pair.

    ``mi_xy = log q_AUTO(y) - log q_NLG(y|x)``, ``mi_yx = log q_AUTO(x) - log q_NLU(x|y)``.
    With ``length_norm`` the text terms are divided by the token count (+EOS)
    and the MR terms by the number of schema slots.
    """
    terms = teacher.score_batch([p.mr for p in pairs], [p.text for p in pairs], threads=threads)
    out = []
    n_slots = max(1, len(teacher.slot_names))
    for i, p in enumerate(pairs):
        ly, lg, lx, lu = terms["auto_y"][i], terms["nlg"][i], terms["auto_x"][i], terms["nlu"][i]
        if length_norm:
            n = len(p.text) + 1
            ly, lg, lx, lu = ly / n, lg / n, lx / n_slots, lu / n_slots
        out.append(dmi_from_terms(ly, lg, lx, lu, id=p.id))
    return out


def dmi_score(pair: ParallelPair, teacher: ModelSet, length_norm: bool = False) -> DmiScore:
    return dmi_scores(teacher, [pair], length_norm)[0]


def normalize_dmi(scores: Sequence[DmiScore], method: str = "minmax") -> np.ndarray:
    """Confidence ``c = 1 - N(DMI)`` over all given scores (also written back into them).

    ``minmax`` rescales DMI linearly to [0, 1]; ``rank`` uses the average
    rank divided by ``n - 1``. Identical scores give c = 1 everywhere.
    """
    if not scores:
        return np.zeros(0)
    d = np.array([s.dmi for s in scores], dtype=np.float64)
    lo, hi = d.min(), d.max()
    if hi == lo:
        c = np.ones_like(d)
    elif method == "minmax":
        c = 1.0 - (d - lo) / (hi - lo)
    elif method == "rank":
        order = np.argsort(d, kind="stable")
        ranks = np.empty_like(d)
        ranks[order] = np.arange(len(d), dtype=np.float64)
        # ties share their mean rank
        for v in np.unique(d):
            sel = d == v
            ranks[sel] = ranks[sel].mean()
        c = 1.0 - ranks / (len(d) - 1)
    else:
        raise ValueError(f"unknown normalization {method!r}")
    c = np.clip(c, 0.0, 1.0)
    for s, v in zip(scores, c):
        s.c = float(v)
    return c


# ------------------------------------------------------------------ two-step


def train_teacher(
    model: ModelSet, clean: Sequence[ParallelPair], cfg: TrainConfig, pools: Pools | None = None, dev=()
) -> tuple[ModelSet, TrainResult]:
    """Step 1, teacher side: all four objectives on the clean pairs plus unpaired pools."""
    if not clean:
        raise ValueError("teacher training needs at least one clean pair")
    res = train(model, cfg, clean, None, pools, dev)
    return model, res


def pretrain_student(
    model: ModelSet, weak: Sequence[ParallelPair], cfg: TrainConfig, pools: Pools | None = None, dev=()
) -> tuple[ModelSet, TrainResult]:
    """Step 1, student side: the same objective mix on weak pairs, all weights 1."""
    if not weak:
        raise ValueError("student pretraining needs at least one weak pair")
    res = train(model, cfg, weak, None, pools, dev)
    return model, res


def finetune_weighted(
    student: ModelSet,
    pairs: Sequence[ParallelPair],
    cfg: TrainConfig,
    teacher: ModelSet | None = None,
    c: Sequence[float] | None = None,
    pools: Pools | None = None,
    dev=(),
) -> tuple[ModelSet, TrainResult, np.ndarray]:
    """Step 2: continue training a copy of ``student`` on clean+weak pairs, supervised terms weighted by c.

    ``c`` is computed once from the frozen ``teacher`` when not supplied.
    Unsupervised objectives on the pools are not weighted.
    """
    if c is None:
        if teacher is None:
            raise ValueError("need either a teacher or precomputed confidences")
        scores = dmi_scores(teacher, pairs, cfg.dmi_length_norm)
        c = normalize_dmi(scores, cfg.dmi_normalization)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (len(pairs),):
        raise ValueError(f"got {c.shape[0]} confidences for {len(pairs)} pairs")
    model = student.clone()
    res = train(model, cfg, pairs, c, pools, dev)
    return model, res, c
