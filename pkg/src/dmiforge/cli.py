"""Command-line entry point: one subcommand per stage plus ``pipeline``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training divergence (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .annotate import annotate, extract_templates, filter_consistency, ingest_external
from .augment import AugmentConfig, swap_augment
from .corpus import (
    DataFormatError,
    Dataset,
    build_vocab,
    load_e2e_csv,
    load_weak_jsonl,
    read_mr_lines,
    relabel,
    value_pools,
    write_mr_lines,
    write_weak_jsonl,
)
from .kernel import CheckpointError, NonFiniteError
from .metrics import run_record, write_report
from .models import ModelSet, load_model, save_model
from .mr import MeaningRepresentation, MRParseError, schema_from_corpus
from .pipeline import (
    PipelineConfig,
    StageError,
    StageFilter,
    apply_overrides,
    confidences_for,
    derive_seed,
    evaluate,
    read_dmi_jsonl,
    run_pipeline,
    stage,
    threads_from_env,
    write_dmi_jsonl,
)
from .training import Pools, dmi_scores, finetune_weighted, normalize_dmi, train

log = logging.getLogger("dmiforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(level: str = "INFO") -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.addFilter(StageFilter())
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(stage)s %(message)s"))
    root = logging.getLogger("dmiforge")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


# ------------------------------------------------------------------ helpers


def _config(args) -> PipelineConfig:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    try:
        raw = apply_overrides(raw, args.set or [])
        if args.seed is not None:
            raw["seeds"] = [args.seed]
        if args.command == "pipeline":
            if args.out:
                raw["out"] = args.out
            if args.baselines is not None:
                raw["baselines"] = [b for b in args.baselines.split(",") if b]
        if args.command == "annotate" and args.noise:
            rates = [float(v) for v in args.noise.split(",")]
            if len(rates) != 3:
                raise ValueError("--noise takes three rates: p_drop,p_hallucinate,p_lexical")
            raw["noise"] = {**raw.get("noise", {}), **dict(zip(("p_drop", "p_hallucinate", "p_lexical"), rates))}
        return PipelineConfig.from_json(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _seed(cfg: PipelineConfig) -> int:
    return cfg.seeds[0]


def _read_mrs(path) -> list[MeaningRepresentation]:
    if str(path).endswith(".csv"):
        return [p.mr for p in load_e2e_csv(path).pairs]
    return read_mr_lines(path)


def _clean(path):
    pairs = load_e2e_csv(path).pairs
    if not pairs:
        raise DataFormatError(f"{path}: no usable pairs")
    return relabel(pairs, 0)


def _combined(clean, weak):
    """Clean and weak pairs with the ids used by ``score`` and ``finetune`` alike."""
    return relabel(clean, 0) + relabel(weak, len(clean))


def _dev(path):
    return load_e2e_csv(path).pairs if path else []


def _steps(args, cfg: PipelineConfig, stage_name: str) -> int:
    return args.steps if args.steps is not None else cfg.step_budget(stage_name)


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    return Path(args.out)


# ------------------------------------------------------------------ commands


def cmd_augment(args, cfg):
    mrs = _read_mrs(args.mrs)
    acfg = AugmentConfig(**{**cfg.augment, "seed": derive_seed(_seed(cfg), "augment")})
    if args.count is not None:
        acfg = AugmentConfig(args.count, acfg.dedup_against_source, acfg.seed)
    out = swap_augment(mrs, value_pools(mrs), acfg)
    write_mr_lines(out, _require_out(args))
    log.info("wrote %d augmented MRs", len(out))


def cmd_annotate(args, cfg):
    if args.external:
        weak = ingest_external(args.external)
    else:
        if not args.clean or not args.mrs:
            raise UsageError("annotate needs --clean and --mrs (or --external)")
        clean = _clean(args.clean)
        mrs = _read_mrs(args.mrs)
        bank = extract_templates(clean, value_pools(mrs + [p.mr for p in clean]))
        weak = annotate(mrs, bank, cfg.noise_config(derive_seed(_seed(cfg), "noise")))
    write_weak_jsonl(weak, _require_out(args))
    log.info("wrote %d weak pairs", len(weak))


def cmd_filter(args, cfg):
    weak = load_weak_jsonl(args.weak)
    threshold = args.threshold if args.threshold is not None else (cfg.filter_threshold or 0.7)
    outcome = filter_consistency(weak, load_model(args.ckpt), threshold)
    if not (args.kept or args.out):
        raise UsageError("filter needs --kept or --out")
    write_weak_jsonl(outcome.kept, args.kept or args.out)
    if args.rejected:
        Path(args.rejected).write_text("".join(" ".join(t) + "\n" for t in outcome.rejected_texts), encoding="utf-8")
    log.info("kept %d, rejected %d at threshold %.2f", len(outcome.kept), outcome.rejected_count, threshold)
    print(json.dumps({"kept": len(outcome.kept), "rejected": outcome.rejected_count,
                      "histogram": outcome.histogram}))


def cmd_train_teacher(args, cfg):
    seed = _seed(cfg)
    clean = _clean(args.clean)
    mrs = _read_mrs(args.mrs) if args.mrs else []
    weak = load_weak_jsonl(args.weak) if args.weak else []
    vocab = build_vocab(Dataset(_combined(clean, weak), unlabeled_mrs=mrs))
    schema = schema_from_corpus([p.mr for p in clean + weak] + mrs)
    model = ModelSet(cfg.model_config(derive_seed(seed, "teacher")), vocab, schema)
    tcfg = cfg.train_config(derive_seed(seed, "teacher.sampling"))
    res = train(model, tcfg, clean, None, Pools(mrs, [p.text for p in clean]), _dev(args.dev),
                _steps(args, cfg, "teacher"))
    save_model(model, _require_out(args))
    log.info("teacher: %d steps, best dev %.4f", res.steps, res.best_dev)


def cmd_pretrain_student(args, cfg):
    seed = _seed(cfg)
    weak = load_weak_jsonl(args.weak)
    if not weak:
        raise DataFormatError(f"{args.weak}: no weak pairs")
    ref = load_model(args.teacher)
    model = ModelSet(cfg.model_config(derive_seed(seed, "student")), ref.vocab, ref.schema)
    mrs = _read_mrs(args.mrs) if args.mrs else []
    tcfg = cfg.train_config(derive_seed(seed, "student.sampling"))
    res = train(model, tcfg, weak, None, Pools(mrs, [p.text for p in weak]), _dev(args.dev),
                _steps(args, cfg, "student"))
    save_model(model, _require_out(args))
    log.info("student: %d steps, best dev %.4f", res.steps, res.best_dev)


def cmd_score(args, cfg):
    teacher = load_model(args.ckpt)
    pairs = _combined(_clean(args.clean), load_weak_jsonl(args.weak))
    tcfg = cfg.train_config(_seed(cfg))
    scores = dmi_scores(teacher, pairs, tcfg.dmi_length_norm, threads_from_env())
    normalize_dmi(scores, tcfg.dmi_normalization)
    write_dmi_jsonl(scores, _require_out(args))
    log.info("scored %d pairs", len(scores))


def cmd_finetune(args, cfg):
    seed = _seed(cfg)
    student = load_model(args.student)
    clean, weak = _clean(args.clean), load_weak_jsonl(args.weak)
    pairs = _combined(clean, weak)
    c = confidences_for(pairs, read_dmi_jsonl(args.dmi)) if args.dmi else np.ones(len(pairs))
    mrs = _read_mrs(args.mrs) if args.mrs else []
    tcfg = cfg.train_config(derive_seed(seed, "finetune.sampling"), max_steps=_steps(args, cfg, "finetune"))
    model, res, _ = finetune_weighted(student, pairs, tcfg, c=c, pools=Pools(mrs, [p.text for p in weak]),
                                      dev=_dev(args.dev))
    save_model(model, _require_out(args))
    log.info("fine-tune: %d steps, best dev %.4f", res.steps, res.best_dev)


def cmd_evaluate(args, cfg):
    model = load_model(args.ckpt)
    test = load_e2e_csv(args.test).pairs
    if not test:
        raise DataFormatError(f"{args.test}: no usable pairs")
    bleu, nlu = evaluate(model, test, cfg.decode)
    record = run_record(Path(args.ckpt).stem, _seed(cfg), {"decode": cfg.decode}, bleu, nlu, {})
    if args.out:
        write_report(record, args.out)
    print(json.dumps(record, indent=2, sort_keys=True))


def cmd_pipeline(args, cfg):
    result = run_pipeline(cfg)
    print(json.dumps(result["aggregate"], indent=2, sort_keys=True))


COMMANDS = {
    "augment": (cmd_augment, "value-swap augmentation of an MR list"),
    "annotate": (cmd_annotate, "weakly label unlabeled MRs (or ingest external weak labels)"),
    "filter": (cmd_filter, "NLU consistency filter over weak pairs"),
    "train-teacher": (cmd_train_teacher, "step 1: train the teacher on clean pairs"),
    "pretrain-student": (cmd_pretrain_student, "step 1: pretrain the student on weak pairs"),
    "score": (cmd_score, "DMI quality scores and confidences for clean+weak pairs"),
    "finetune": (cmd_finetune, "step 2: confidence-weighted fine-tuning of the student"),
    "evaluate": (cmd_evaluate, "BLEU-4 and NLU metrics of a checkpoint on a test CSV"),
    "pipeline": (cmd_pipeline, "end-to-end experiment over all configured seeds"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmiforge", description="Dual NLG/NLU training with weak supervision and DMI weighting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("--config", help="JSON pipeline config (defaults apply to missing keys)")
        p.add_argument("--seed", type=int, help="run seed (replaces the config's seed list)")
        p.add_argument("--out", help="output file (output directory for 'pipeline')")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. train.base_lr=0.01")
        if name in ("train-teacher", "pretrain-student", "finetune"):
            p.add_argument("--steps", type=int, help="step budget (overrides config steps)")
            p.add_argument("--mrs", help="unlabeled MR pool (MR lines or CSV)")
            p.add_argument("--dev", help="dev CSV for early stopping")
    a = sub.choices
    a["augment"].add_argument("--in", "--mrs", dest="mrs", required=True, help="source MRs (MR lines or CSV)")
    a["augment"].add_argument("--count", type=int, help="number of new MRs")
    a["annotate"].add_argument("--clean", help="clean pairs CSV (template source)")
    a["annotate"].add_argument("--mrs", help="MRs to label (MR lines or CSV)")
    a["annotate"].add_argument("--noise", metavar="P_DROP,P_HALL,P_LEX", help="corruption rates (overrides config)")
    a["annotate"].add_argument("--external", help="ingest weak labels produced elsewhere (JSONL)")
    a["filter"].add_argument("--weak", required=True)
    a["filter"].add_argument("--nlu", "--ckpt", dest="ckpt", required=True, help="checkpoint whose NLU does the check")
    a["filter"].add_argument("--threshold", type=float)
    a["filter"].add_argument("--kept", help="kept pairs JSONL (defaults to --out)")
    a["filter"].add_argument("--rejected", help="texts of rejected pairs, one per line")
    a["train-teacher"].add_argument("--clean", required=True)
    a["train-teacher"].add_argument("--weak", help="weak pairs, used only to size the shared vocabulary")
    a["pretrain-student"].add_argument("--weak", required=True)
    a["pretrain-student"].add_argument("--teacher", required=True, help="teacher checkpoint (vocabulary and schema)")
    a["score"].add_argument("--ckpt", required=True, help="teacher checkpoint")
    a["score"].add_argument("--clean", required=True)
    a["score"].add_argument("--weak", required=True)
    a["finetune"].add_argument("--student", required=True)
    a["finetune"].add_argument("--clean", required=True)
    a["finetune"].add_argument("--weak", required=True)
    a["finetune"].add_argument("--dmi", help="dmi.jsonl from 'score' (omit for c = 1)")
    a["evaluate"].add_argument("--ckpt", required=True)
    a["evaluate"].add_argument("--test", required=True)
    a["pipeline"].add_argument("--baselines", help="comma-separated baseline runs (replaces the config list)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config(args)
        with stage(args.command if args.command != "pipeline" else "-"):
            COMMANDS[args.command][0](args, cfg)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except StageError as exc:
        return _report_failure(exc.cause, exc.stage)
    return EXIT_OK


def _report_failure(exc: BaseException, stage_name: str) -> int:
    if isinstance(exc, UsageError):
        log.error("%s", exc)
        return EXIT_USAGE
    if isinstance(exc, NonFiniteError):
        log.error("training diverged in %s: %s", stage_name, exc)
        return EXIT_DIVERGED
    if isinstance(exc, (DataFormatError, MRParseError, CheckpointError, OSError, KeyError, ValueError)):
        log.error("data error in %s: %s", stage_name, exc)
        return EXIT_DATA
    log.exception("unexpected failure in %s", stage_name, exc_info=exc)
    return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
