"""End-to-end experiment runner.

One seed runs: data preparation, MR augmentation, weak annotation, teacher
training, consistency filtering, student pretraining (step 1), DMI scoring,
weighted fine-tuning (step 1+2), the requested baselines and evaluation.
Expensive stages are cached under the output directory and keyed by a hash
of their configuration and input artifacts, so an interrupted run resumes
without reusing anything stale.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .annotate import NoiseConfig, annotate, extract_templates, filter_consistency, ingest_external
from .augment import AugmentConfig, swap_augment
from .corpus import (
    CLEAN,
    WEAK,
    DataFormatError,
    Dataset,
    ParallelPair,
    build_vocab,
    load_e2e_csv,
    relabel,
    split,
    value_pools,
    write_e2e_csv,
    write_mr_lines,
    write_weak_jsonl,
)
from .metrics import bleu4, nlu_report, run_record, write_report, write_sweep_csv
from .models import ModelConfig, ModelSet, load_model, save_model
from .mr import MeaningRepresentation, schema_from_corpus, slot_fscore
from .synth import Grammar, SynthSpec, synth_benchmark
from .training import DmiScore, Pools, TrainConfig, dmi_scores, finetune_weighted, normalize_dmi, train

log = logging.getLogger(__name__)

MAIN_RUN = "step1+2"
BASELINES = ("decoupled", "joint", "joint+aug", "step1", "unweighted")

STAGE: contextvars.ContextVar[str] = contextvars.ContextVar("stage", default="-")


class StageFilter(logging.Filter):
    """Adds the current pipeline stage to every record as ``record.stage``."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.stage = STAGE.get()
        return True


@contextlib.contextmanager
def stage(name: str):
    token = STAGE.set(name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        STAGE.reset(token)


class StageError(RuntimeError):
    def __init__(self, stage_name: str, cause: BaseException):
        super().__init__(f"stage {stage_name!r} failed: {cause}")
        self.stage = stage_name
        self.cause = cause


def threads_from_env() -> int:
    raw = os.environ.get("DMIFORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer DMIFORGE_THREADS=%r", raw)
        return 1


# ------------------------------------------------------------------ config


def _desk_model() -> dict:
    return asdict(ModelConfig(embed_dim=32, hidden_dim=64, latent_dim=64, encoder_layers=1, max_decode_len=40))


def _desk_train() -> dict:
    return asdict(TrainConfig(base_lr=0.005, batch=28, eval_every=20, patience=5, dmi_normalization="rank"))


@dataclass
class PipelineConfig:
    """Everything one experiment needs. Exactly one of ``synth`` and ``e2e_csv`` is set.

    ``k`` is the clean budget: a pair count (>= 1) or a fraction of the
    training split (0 < k < 1). ``steps`` caps each training stage.
    """

    synth: dict | None = field(default_factory=lambda: asdict(SynthSpec()))
    e2e_csv: str | None = None
    split: tuple[float, float, float] = (0.5, 0.25, 0.25)
    k: float = 10
    dev_size: int = 50
    test_size: int = 100
    augment: dict = field(default_factory=lambda: {"target_count": 0, "dedup_against_source": True})
    noise: dict = field(default_factory=lambda: {"p_drop": 0.15, "p_hallucinate": 0.15, "p_lexical": 0.1})
    weak_path: str | None = None
    filter_threshold: float | None = None
    model: dict = field(default_factory=_desk_model)
    train: dict = field(default_factory=_desk_train)
    steps: dict = field(
        default_factory=lambda: {"teacher": 100, "student": 400, "finetune": 400, "decoupled": 300, "joint+aug": 300}
    )
    decode: dict = field(default_factory=lambda: {"mode": "greedy", "k": 3})
    baselines: list[str] = field(default_factory=lambda: list(BASELINES))
    seeds: list[int] = field(default_factory=lambda: [0])
    jobs: int = 1
    out: str = "runs"

    def __post_init__(self):
        self.split = tuple(self.split)
        if (self.synth is None) == (self.e2e_csv is None):
            raise ValueError("set exactly one data source: 'synth' or 'e2e_csv'")
        if not (self.k >= 1 or 0 < self.k < 1):
            raise ValueError(f"clean budget k must be >= 1 or a fraction in (0, 1), got {self.k}")
        if self.k >= 1 and self.k != int(self.k):
            raise ValueError(f"clean budget k >= 1 must be a whole number, got {self.k}")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ValueError(f"unknown baselines {sorted(unknown)}; choose from {list(BASELINES)}")
        if self.filter_threshold is not None and not 0.0 <= self.filter_threshold <= 1.0:
            raise ValueError("filter_threshold must lie in [0, 1]")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.decode.get("mode", "greedy") not in ("greedy", "beam"):
            raise ValueError(f"unknown decoding mode {self.decode.get('mode')!r}")
        # fail early on bad nested sections
        self.model_config(0)
        self.train_config(0)
        self.noise_config(0)
        if self.synth is not None:
            SynthSpec(**self.synth)
        AugmentConfig(**self.augment)

    def model_config(self, seed: int) -> ModelConfig:
        return ModelConfig(**{**self.model, "seed": seed})

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed, **overrides})

    def noise_config(self, seed: int) -> NoiseConfig:
        return NoiseConfig(**{**self.noise, "seed": seed})

    def step_budget(self, stage_name: str) -> int:
        return int(self.steps.get(stage_name, self.train.get("max_steps", TrainConfig.max_steps)))

    def to_json(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        """Missing keys take defaults; partial nested sections are merged into the default section."""
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        defaults = {f.name: (f.default_factory() if callable(f.default_factory) else f.default) for f in fields(cls)}
        if obj.get("e2e_csv") is not None and "synth" not in obj:
            obj = {**obj, "synth": None}
        args = {}
        for name, default in defaults.items():
            if name not in obj:
                continue
            value = obj[name]
            if isinstance(default, dict) and isinstance(value, dict):
                value = {**default, **value}
            args[name] = value
        return cls(**args)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def apply_overrides(obj: dict, assignments: Sequence[str]) -> dict:
    """``section.key=value`` overrides; values are parsed as JSON when possible."""
    out = json.loads(json.dumps(obj))
    for item in assignments:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        keys = path.split(".")
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return out


def derive_seed(seed: int, role: str) -> int:
    """Independent integer seed for one role (model init, sampling, ...) of a run."""
    digest = hashlib.sha256(role.encode()).digest()
    return int(np.random.SeedSequence([seed, int.from_bytes(digest[:4], "little")]).generate_state(1)[0])


# ------------------------------------------------------------------ caching


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def content_key(**material: Any) -> str:
    return hashlib.sha256(json.dumps(material, sort_keys=True, default=str).encode()).hexdigest()


class StageCache:
    """Per-seed record of stage keys and output hashes (``stages.json``)."""

    def __init__(self, root: Path):
        self.root = root
        self.path = root / "stages.json"
        self.entries: dict = json.loads(self.path.read_text()) if self.path.exists() else {}

    def fresh(self, name: str, key: str) -> bool:
        entry = self.entries.get(name)
        if entry is None:
            return False
        if entry["key"] != key:
            log.info("cached %s is stale (inputs or config changed), recomputing", name)
            return False
        for fname, digest in entry["files"].items():
            p = self.root / fname
            if not p.exists() or file_hash(p) != digest:
                log.info("cached %s artifact %s is missing or modified, recomputing", name, fname)
                return False
        return True

    def record(self, name: str, key: str, files: Sequence[str]) -> None:
        self.entries[name] = {"key": key, "files": {f: file_hash(self.root / f) for f in files}}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.entries, indent=2, sort_keys=True))
        tmp.replace(self.path)

    def digest(self, fname: str) -> str:
        return file_hash(self.root / fname)


# ------------------------------------------------------------------ data


@dataclass
class Prepared:
    clean: list[ParallelPair]
    dev: list[ParallelPair]
    test: list[ParallelPair]
    pool_mrs: list[MeaningRepresentation]
    grammar: Grammar | None = None


def prepare_data(cfg: PipelineConfig, seed: int) -> Prepared:
    """Split, draw the clean budget and collect (and optionally augment) the unlabeled MR pool."""
    grammar = None
    if cfg.synth is not None:
        spec = SynthSpec(**{**cfg.synth, "seed": cfg.synth.get("seed", 0) + seed})
        ds, grammar = synth_benchmark(spec)
    else:
        ds = load_e2e_csv(cfg.e2e_csv)
    train_part, dev_part, test_part = split(ds, cfg.split, seed)
    if not train_part.pairs:
        raise DataFormatError("training split is empty")
    k = int(cfg.k) if cfg.k >= 1 else max(1, round(cfg.k * len(train_part.pairs)))
    if k > len(train_part.pairs):
        raise DataFormatError(f"clean budget {k} exceeds the {len(train_part.pairs)} training pairs")
    order = np.random.default_rng(derive_seed(seed, "clean")).permutation(len(train_part.pairs))
    chosen = sorted(order[:k].tolist())
    clean = relabel([train_part.pairs[i] for i in chosen], 0, provenance=CLEAN)
    if train_part.unlabeled_mrs:
        pool = list(train_part.unlabeled_mrs)
    else:
        rest = sorted(order[k:].tolist())
        pool = [train_part.pairs[i].mr for i in rest]
    n_aug = int(cfg.augment.get("target_count", 0))
    if n_aug:
        acfg = AugmentConfig(**{**cfg.augment, "seed": derive_seed(seed, "augment")})
        sources = [p.mr for p in clean] + pool
        extra = swap_augment(sources, value_pools(sources), acfg)
        known = set(pool)
        pool += [m for m in extra if m not in known]
    dev = dev_part.pairs[: cfg.dev_size] if cfg.dev_size else dev_part.pairs
    test = test_part.pairs[: cfg.test_size] if cfg.test_size else test_part.pairs
    return Prepared(clean, list(dev), list(test), pool, grammar)


def weak_labels(cfg: PipelineConfig, seed: int, data: Prepared) -> list[ParallelPair]:
    if cfg.weak_path:
        return relabel(ingest_external(cfg.weak_path), len(data.clean), provenance=WEAK)
    pools = value_pools(data.pool_mrs + [p.mr for p in data.clean])
    bank = extract_templates(data.clean, pools)
    return annotate(data.pool_mrs, bank, cfg.noise_config(derive_seed(seed, "noise")), start_id=len(data.clean))


def build_models_meta(data: Prepared, weak: Sequence[ParallelPair]):
    vocab = build_vocab(Dataset(list(data.clean) + list(weak), unlabeled_mrs=data.pool_mrs))
    schema = schema_from_corpus([p.mr for p in data.clean] + [p.mr for p in weak] + data.pool_mrs)
    return vocab, schema


# ------------------------------------------------------------------ evaluation


def evaluate(model: ModelSet, test: Sequence[ParallelPair], decode: dict | None = None):
    decode = decode or {}
    mode, k = decode.get("mode", "greedy"), int(decode.get("k", 3))
    hyps = model.generate_batch([p.mr for p in test], mode, k)
    bleu = bleu4(hyps, [p.text for p in test])
    nlu = nlu_report(model.nlu_predict([p.text for p in test]), [p.mr for p in test])
    return bleu, nlu


def read_dmi_jsonl(path: str | Path) -> list[DmiScore]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(DmiScore(obj["mi_xy"], obj["mi_yx"], obj["dmi"], obj.get("c"), int(obj["id"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{n}: bad DMI record ({exc})") from exc
    return out


def write_dmi_jsonl(scores: Sequence[DmiScore], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scores:
            fh.write(json.dumps({"id": s.id, "mi_xy": s.mi_xy, "mi_yx": s.mi_yx, "dmi": s.dmi, "c": s.c}) + "\n")


def confidences_for(pairs: Sequence[ParallelPair], scores: Sequence[DmiScore]) -> np.ndarray:
    by_id = {s.id: s.c for s in scores}
    missing = [p.id for p in pairs if by_id.get(p.id) is None]
    if missing:
        raise DataFormatError(f"no confidence for pair ids {missing[:5]}")
    return np.array([by_id[p.id] for p in pairs], dtype=np.float64)


def _true_corrupted(grammar: Grammar, pairs: Sequence[ParallelPair]) -> np.ndarray:
    return np.array([slot_fscore(grammar.parse(p.text), p.mr).f1 < 1.0 for p in pairs], dtype=bool)


def _mean(x: np.ndarray) -> float | None:
    return float(x.mean()) if x.size else None


def diagnostics(
    grammar: Grammar, weak: Sequence[ParallelPair], kept: Sequence[ParallelPair], scored, scores: Sequence[DmiScore]
) -> dict:
    """Oracle label-quality statistics, available on the synthetic benchmark only."""
    corrupted = _true_corrupted(grammar, scored)
    gap = np.array([s.gap for s in scores])
    c = np.array([s.c for s in scores], dtype=np.float64)
    return {
        "weak_corruption": _mean(_true_corrupted(grammar, weak)),
        "kept_corruption": _mean(_true_corrupted(grammar, kept)),
        "n_scored_clean": int((~corrupted).sum()),
        "n_scored_corrupted": int(corrupted.sum()),
        "gap_clean": _mean(gap[~corrupted]),
        "gap_corrupted": _mean(gap[corrupted]),
        "c_clean": _mean(c[~corrupted]),
        "c_corrupted": _mean(c[corrupted]),
    }


# ------------------------------------------------------------------ one seed


def run_seed(cfg: PipelineConfig, seed: int) -> dict:
    """Runs every stage for one seed; returns the seed report (also written to disk)."""
    root = Path(cfg.out) / f"seed_{seed}"
    root.mkdir(parents=True, exist_ok=True)
    cache = StageCache(root)
    threads = threads_from_env()
    timings: dict[str, float] = {}
    # execution-only keys stay out of the records so reports depend on the experiment alone
    cfg_json = {k: v for k, v in cfg.to_json().items() if k not in ("out", "jobs", "seeds")}

    def timed(name: str, fn: Callable):
        t0 = time.perf_counter()
        with stage(name):
            out = fn()
        timings[name] = round(time.perf_counter() - t0, 3)
        return out

    def cached_model(name: str, key_material: dict, build: Callable[[], tuple[ModelSet, int]]):
        fname = f"{name.replace('+', '_plus_')}.ckpt"
        key = content_key(stage=name, **key_material)

        def go():
            if cache.fresh(name, key):
                log.info("reusing %s", fname)
                meta = json.loads((root / (fname + ".json")).read_text())
                return load_model(root / fname), meta["steps"]
            model, steps = build()
            save_model(model, root / fname)
            (root / (fname + ".json")).write_text(json.dumps({"steps": steps}))
            cache.record(name, key, [fname, fname + ".json"])
            return model, steps

        return timed(name, go)

    # cheap, deterministic stages are always rebuilt; their artifacts feed the cache keys
    data = timed("data", lambda: prepare_data(cfg, seed))
    weak = timed("annotate", lambda: weak_labels(cfg, seed, data))
    with stage("data"):
        write_e2e_csv(data.clean, root / "clean.csv")
        write_e2e_csv(data.dev, root / "dev.csv")
        write_e2e_csv(data.test, root / "test.csv")
        write_mr_lines(data.pool_mrs, root / "pool_mrs.txt")
        write_weak_jsonl(weak, root / "weak.jsonl")
    vocab, schema = build_models_meta(data, weak)
    inputs = {f: cache.digest(f) for f in ("clean.csv", "dev.csv", "pool_mrs.txt", "weak.jsonl")}
    base = {"model": cfg.model, "train": cfg.train, "seed": seed, "inputs": inputs}
    pool_mrs = data.pool_mrs
    clean_texts = [p.text for p in data.clean]

    def fresh_model(role: str) -> ModelSet:
        return ModelSet(cfg.model_config(derive_seed(seed, role)), vocab, schema)

    def fit(role: str, pairs, weights, pools: Pools, budget: str, **overrides):
        model = fresh_model(role)
        tcfg = cfg.train_config(derive_seed(seed, role + ".sampling"), **overrides)
        res = train(model, tcfg, pairs, weights, pools, data.dev, cfg.step_budget(budget))
        log.info("%s: %d steps, best dev %.4f at step %d", role, res.steps, res.best_dev, res.best_step)
        return model, res.steps

    teacher, teacher_steps = cached_model(
        "teacher",
        {**base, "steps": cfg.step_budget("teacher")},
        lambda: fit("teacher", data.clean, None, Pools(pool_mrs, clean_texts), "teacher"),
    )

    def build_decoupled():
        return cached_model(
            "decoupled",
            {**base, "steps": cfg.step_budget("decoupled")},
            lambda: fit(
                "decoupled", data.clean, None, Pools(), "decoupled",
                lambda_dtd=0.0, lambda_tdt=0.0, lambda_ae=0.0,
            ),
        )

    decoupled = None
    if cfg.filter_threshold is not None or "decoupled" in cfg.baselines:
        decoupled = build_decoupled()

    def do_filter():
        if cfg.filter_threshold is None:
            return list(weak), None
        # a fresh NLU that has seen only the clean pairs does the check
        outcome = filter_consistency(weak, decoupled[0], cfg.filter_threshold)
        log.info("kept %d of %d weak pairs at threshold %.2f", len(outcome.kept), len(weak), cfg.filter_threshold)
        return outcome.kept, outcome

    kept, outcome = timed("filter", do_filter)
    with stage("filter"):
        if not kept:
            raise DataFormatError("the consistency filter rejected every weak pair")
        write_weak_jsonl(kept, root / "kept.jsonl")
    teacher_digest = cache.digest("teacher.ckpt")
    kept_digest = cache.digest("kept.jsonl")
    # rejected pairs still contribute their texts as unpaired data
    weak_texts = [p.text for p in weak]

    student, student_steps = cached_model(
        "student",
        {**base, "kept": kept_digest, "steps": cfg.step_budget("student")},
        lambda: fit("student", kept, None, Pools(pool_mrs, weak_texts), "student"),
    )

    combined = list(data.clean) + list(kept)
    score_key = content_key(
        stage="score", teacher=teacher_digest, kept=kept_digest, clean=inputs["clean.csv"],
        length_norm=cfg.train.get("dmi_length_norm", False),
        normalization=cfg.train.get("dmi_normalization", "minmax"),
    )

    def do_score():
        if cache.fresh("score", score_key):
            log.info("reusing dmi.jsonl")
            return read_dmi_jsonl(root / "dmi.jsonl")
        tcfg = cfg.train_config(seed)
        scores = dmi_scores(teacher, combined, tcfg.dmi_length_norm, threads)
        normalize_dmi(scores, tcfg.dmi_normalization)
        write_dmi_jsonl(scores, root / "dmi.jsonl")
        cache.record("score", score_key, ["dmi.jsonl"])
        return scores

    scores = timed("score", do_score)
    c = confidences_for(combined, scores)
    student_digest = cache.digest("student.ckpt")
    ft_pools = Pools(pool_mrs, weak_texts)

    cfg_ft = {**base, "student": student_digest, "steps": cfg.step_budget("finetune")}

    def finetune_build(weights):
        def build():
            tcfg = cfg.train_config(
                derive_seed(seed, "finetune.sampling"), max_steps=cfg.step_budget("finetune")
            )
            model, res, _ = finetune_weighted(student, combined, tcfg, c=weights, pools=ft_pools, dev=data.dev)
            log.info("fine-tune: %d steps, best dev %.4f at step %d", res.steps, res.best_dev, res.best_step)
            return model, res.steps

        return build

    final, final_steps = cached_model(
        MAIN_RUN, {**cfg_ft, "dmi": cache.digest("dmi.jsonl")}, finetune_build(c)
    )

    runs: dict[str, tuple[ModelSet, dict]] = {
        MAIN_RUN: (final, {"teacher": teacher_steps, "student": student_steps, "finetune": final_steps})
    }
    for name in cfg.baselines:
        if name == "joint":
            runs[name] = (teacher, {"teacher": teacher_steps})
        elif name == "step1":
            runs[name] = (student, {"student": student_steps})
        elif name == "unweighted":
            m, n = cached_model("unweighted", cfg_ft, finetune_build(np.ones(len(combined))))
            runs[name] = (m, {"teacher": teacher_steps, "student": student_steps, "finetune": n})
        elif name == "decoupled":
            m, n = decoupled
            runs[name] = (m, {"decoupled": n})
        elif name == "joint+aug":
            m, n = cached_model(
                "joint+aug",
                {**base, "steps": cfg.step_budget("joint+aug")},
                lambda: fit("joint+aug", data.clean, None, Pools(pool_mrs, clean_texts + weak_texts), "joint+aug"),
            )
            runs[name] = (m, {"joint+aug": n})

    def do_eval():
        records = {}
        for name, (model, steps) in runs.items():
            bleu, nlu = evaluate(model, data.test, cfg.decode)
            log.info("%s: BLEU-4 %.4f, joint accuracy %.4f", name, bleu.bleu, nlu.joint_accuracy)
            records[name] = run_record(name, seed, cfg_json, bleu, nlu, steps)
            write_report(records[name], root / f"metrics_{name.replace('+', '_plus_')}.json")
        return records

    records = timed("evaluate", do_eval)
    report = {
        "seed": seed,
        "data": {
            "clean": len(data.clean),
            "weak": len(weak),
            "kept": len(kept),
            "pool_mrs": len(pool_mrs),
            "dev": len(data.dev),
            "test": len(data.test),
            "filter_histogram": outcome.histogram if outcome is not None else None,
        },
        "runs": records,
    }
    if data.grammar is not None:
        report["diagnostics"] = diagnostics(data.grammar, weak, kept, combined, scores)
    write_report(report, root / "report.json")
    (root / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return report


# ------------------------------------------------------------------ sweep


def aggregate(reports: Sequence[dict]) -> dict:
    """Mean and (population) standard deviation of every metric per run over seeds."""
    metrics = {
        "bleu4": lambda r: r["bleu4"]["bleu"],
        "joint_accuracy": lambda r: r["nlu"]["joint_accuracy"],
        "slot_f1": lambda r: r["nlu"]["f1"],
    }
    out: dict = {"seeds": [r["seed"] for r in reports], "runs": {}}
    names = sorted({n for r in reports for n in r["runs"]})
    for name in names:
        recs = [r["runs"][name] for r in reports if name in r["runs"]]
        out["runs"][name] = {
            m: {"mean": float(np.mean([f(x) for x in recs])), "std": float(np.std([f(x) for x in recs]))}
            for m, f in metrics.items()
        }
    return out


def _run_seed_job(cfg_json: dict, seed: int) -> dict:
    return run_seed(PipelineConfig.from_json(cfg_json), seed)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """All seeds, then ``aggregate.json`` and ``sweep.csv`` in ``cfg.out``."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")
    if cfg.jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(cfg.seeds))) as pool:
            reports = list(pool.map(_run_seed_job, [cfg.to_json()] * len(cfg.seeds), cfg.seeds))
    else:
        reports = [run_seed(cfg, s) for s in cfg.seeds]
    agg = aggregate(reports)
    write_report(agg, out / "aggregate.json")
    order = [MAIN_RUN] + [b for b in BASELINES if b in cfg.baselines]
    write_sweep_csv([r["runs"][n] for n in order for r in reports], out / "sweep.csv")
    log.info("wrote %d seed reports to %s", len(reports), out)
    return {"reports": reports, "aggregate": agg}
