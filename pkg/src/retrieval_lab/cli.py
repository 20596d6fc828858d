"""Single executable exposing the pipeline as subcommands.

Configuration is a flat key=value file whose keys mirror the config
dataclass fields; command-line flags override file values. Every command
writes a run manifest next to its outputs. Exit codes: 0 success, 1 usage
error, 2 data error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import core, evalsuite, lexindex, synthgen, trainer
from .core import DataError, FilterConfig, Question
from .embedder import DualEncoderModel, encode_question, load_checkpoint, model_content_hash
from .lexindex import CandidateSetError
from .meqfilter import filter_candidates, report_to_pair
from .synthgen import GenerationError, WorldConfig
from .trainer import (
    AugmentationPools,
    MeqCandidate,
    TrainConfig,
    TrainData,
    TrainingError,
    TrainingExample,
)

_DATA_ERRORS = (
    DataError,
    GenerationError,
    CandidateSetError,
    TrainingError,
    evalsuite.CacheError,
    FileNotFoundError,
)


def load_kv_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key=value file; '#' starts a comment."""
    values: dict[str, str] = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(value: str, kind: type):
    if kind is bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise DataError(f"cannot parse boolean from {value!r}")
    return kind(value)


def _resolve(args: argparse.Namespace, config: dict[str, str], key: str, kind: type, default):
    """Flag value if given, else config-file value, else the default."""
    flag_value = getattr(args, key, None)
    if flag_value is not None:
        return flag_value
    if key in config:
        return _coerce(config[key], kind)
    return default


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    command: str,
    out_dir: Path,
    config: dict,
    inputs: dict[str, str],
    outputs: Sequence[Path],
    seed: int | None,
    started: float,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": {p.name: _sha256(p) for p in outputs},
        "seed": seed,
        "timestamps": {
            "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        },
    }
    (out_dir / f"{command}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _print_table(rows: Sequence[Sequence[str]], header: Sequence[str]) -> None:
    table = [list(header)] + [list(map(str, row)) for row in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for r, row in enumerate(table):
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if r == 0:
            print("  ".join("-" * widths[i] for i in range(len(header))))


def _metric_rows(metrics: Sequence[dict]) -> list[list[str]]:
    return [
        [m["metric"], "" if m.get("k") is None else str(m["k"]), f"{m['value']:.6f}"]
        for m in metrics
    ]


def _write_report(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(list(rows), indent=2, sort_keys=True))


def _load_questions_merged(paths: Sequence[str], workdir: Path) -> dict[str, Question]:
    questions: dict[str, Question] = {}
    for p in paths:
        for q in core.load_questions(workdir / p):
            if q.id in questions:
                raise DataError(f"duplicate question id {q.id!r} across question files")
            questions[q.id] = q
    return questions


def _load_gold(path: Path) -> dict[str, str]:
    gold: dict[str, str] = {}
    for lineno, record in core.read_jsonl(path):
        if "question_id" not in record or "positive" not in record:
            raise DataError(f"{path}:{lineno}: expected question_id and positive")
        gold[record["question_id"]] = record["positive"]
    return gold


def _load_train_examples(path: Path) -> list[TrainingExample]:
    examples = []
    for lineno, record in core.read_jsonl(path):
        try:
            examples.append(
                TrainingExample(
                    question_id=record["question_id"],
                    positive=record["positive"],
                    hard_negatives=tuple(record["hard_negatives"]),
                    origin=record.get("origin", "original"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return examples


def _load_pools(path: Path) -> AugmentationPools:
    pools = AugmentationPools()
    for lineno, record in core.read_jsonl(path):
        try:
            qid = record["question_id"]
            pools.paraphrases[qid] = tuple(
                Question(id=p["id"], text=p["text"], answers=tuple(p["answers"]))
                for p in record.get("paraphrases", ())
            )
            pools.meqs[qid] = tuple(
                MeqCandidate(
                    question=Question(id=m["id"], text=m["text"], answers=tuple(m["answers"])),
                    positive=m["positive"],
                    hard_negatives=tuple(m["hard_negatives"]),
                )
                for m in record.get("meqs", ())
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return pools


def _load_triples(path: Path) -> list[tuple[str, str, str]]:
    triples = []
    for lineno, record in core.read_jsonl(path):
        try:
            triples.append((record["q_id"], record["para_id"], record["meq_id"]))
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
    return triples


def _model_from_args(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> DualEncoderModel:
    if getattr(args, "checkpoint", None):
        return load_checkpoint(workdir / args.checkpoint)
    hash_buckets = _resolve(args, config, "hash_buckets", int, 1 << 16)
    dim = _resolve(args, config, "dim", int, 64)
    seed = _resolve(args, config, "seed", int, 0)
    return DualEncoderModel.initialize(hash_buckets=hash_buckets, dim=dim, rng_seed=seed)


# --- subcommand implementations -------------------------------------------


def _cmd_gen_world(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    fields = {
        "n_entities": int, "n_attributes": int, "n_passages": int,
        "n_train_questions": int, "n_contrast_questions": int,
        "n_heldout_questions": int, "paraphrases_per_question": int,
        "meqs_per_question": int, "vocab_size": int, "seed": int,
    }
    defaults = WorldConfig()
    cfg = WorldConfig(**{
        name: _resolve(args, config, name, kind, getattr(defaults, name))
        for name, kind in fields.items()
    })
    world = synthgen.generate_world(cfg)

    out_dir = workdir / args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    core.save_passages(out_dir / "corpus.jsonl", world.passages.values())
    core.save_questions(out_dir / "train_questions.jsonl", world.train_questions)
    core.save_questions(out_dir / "heldout_questions.jsonl", world.heldout_questions)
    core.save_questions(out_dir / "variant_questions.jsonl", world.variant_questions.values())
    core.save_pairs(out_dir / "contrast_pairs.jsonl", world.contrast_pairs)
    core.write_jsonl(
        out_dir / "train_examples.jsonl",
        (
            {
                "question_id": ex.question_id,
                "positive": ex.positive,
                "hard_negatives": list(ex.hard_negatives),
                "origin": ex.origin,
            }
            for ex in world.train_examples
        ),
    )
    core.write_jsonl(
        out_dir / "pools.jsonl",
        (
            {
                "question_id": q.id,
                "paraphrases": [
                    {"id": p.id, "text": p.text, "answers": list(p.answers)}
                    for p in world.pools.paraphrases.get(q.id, ())
                ],
                "meqs": [
                    {
                        "id": m.question.id,
                        "text": m.question.text,
                        "answers": list(m.question.answers),
                        "positive": m.positive,
                        "hard_negatives": list(m.hard_negatives),
                    }
                    for m in world.pools.meqs.get(q.id, ())
                ],
            }
            for q in world.train_questions
        ),
    )
    core.write_jsonl(
        out_dir / "triples.jsonl",
        ({"q_id": a, "para_id": b, "meq_id": c} for a, b, c in world.eval_triples),
    )
    core.write_jsonl(
        out_dir / "gold.jsonl",
        ({"question_id": qid, "positive": pid} for qid, pid in sorted(world.gold.items())),
    )
    (out_dir / "world_manifest.json").write_text(json.dumps(world.manifest, indent=2, sort_keys=True))

    outputs = sorted(p for p in out_dir.iterdir() if not p.name.endswith("manifest.json"))
    _write_manifest("gen-world", out_dir, asdict(cfg), {}, outputs, cfg.seed, started)
    _print_table(
        [
            ["passages", str(world.manifest["n_passages"])],
            ["train questions", str(world.manifest["n_train_questions"])],
            ["heldout questions", str(world.manifest["n_heldout_questions"])],
            ["contrast pairs", str(world.manifest["n_contrast_pairs"])],
            ["semantic pass rate", f"{world.manifest['semantic_pass_rate']:.4f}"],
        ],
        header=("field", "value"),
    )
    return 0


def _cmd_build_index(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    corpus = core.load_passages(workdir / args.corpus)
    k1 = _resolve(args, config, "k1", float, 1.2)
    b = _resolve(args, config, "b", float, 0.75)
    index = lexindex.build_index(corpus, k1=k1, b=b)
    out = workdir / args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    lexindex.save_index(index, out)
    _write_manifest(
        "build-index", out.parent, {"k1": k1, "b": b}, {"corpus": args.corpus}, [out], None, started
    )
    _print_table([["passages", str(index.n_docs)], ["terms", str(len(index.postings))]],
                 header=("field", "value"))
    return 0


def _cmd_build_candidates(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    questions = _load_questions_merged(args.questions, workdir)
    gold = _load_gold(workdir / args.gold)
    index = lexindex.load_index(workdir / args.index)
    seed = _resolve(args, config, "seed", int, 0)
    rng = np.random.default_rng([seed, 101])
    sets = []
    for qid in sorted(questions):
        if qid not in gold:
            continue
        sets.append(lexindex.build_candidate_set(questions[qid], gold[qid], index, rng))
    if not sets:
        raise DataError("no questions with gold passages; nothing to build")
    out = workdir / args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    lexindex.save_candidate_sets(out, sets)
    _write_manifest(
        "build-candidates", out.parent, {"seed": seed},
        {"gold": args.gold, "index": args.index, "questions": ",".join(args.questions)},
        [out], seed, started,
    )
    _print_table([["candidate sets", str(len(sets))]], header=("field", "value"))
    return 0


def _cmd_filter_meq(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    questions = _load_questions_merged(args.questions, workdir)
    eps_lexical = _resolve(args, config, "eps_lexical", int, 3)
    eps_semantic = _resolve(args, config, "eps_semantic_cos", float, 0.95)
    filter_cfg = FilterConfig(eps_lexical=eps_lexical, eps_semantic_cos=eps_semantic)
    model = _model_from_args(args, config, workdir)
    embed = lambda q: encode_question(model, q)  # noqa: E731

    candidates_path = workdir / args.candidates
    grouped: dict[str, list[tuple[Question, int]]] = {}
    counters: dict[str, int] = {}
    for lineno, record in core.read_jsonl(candidates_path):
        try:
            oid = record["original_id"]
            idx = counters.get(oid, 0)
            counters[oid] = idx + 1
            candidate = Question(
                id=f"{oid}-cand{idx}",
                text=record["candidate_text"],
                answers=tuple(record["candidate_answers"]),
            )
            grouped.setdefault(oid, []).append((candidate, int(record["frequency"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{candidates_path}:{lineno}: {exc}") from exc

    pairs = []
    selected_count = 0
    for oid in grouped:
        if oid not in questions:
            raise DataError(f"unknown original question id {oid!r}")
        original = questions[oid]
        selected, reports = filter_candidates(original, grouped[oid], filter_cfg, embed)
        for report in reports:
            is_selected = selected is not None and report.candidate.id == selected.id
            pairs.append(report_to_pair(original, report, is_selected))
            selected_count += int(is_selected)
    out = workdir / args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    core.save_pairs(out, pairs)
    _write_manifest(
        "filter-meq", out.parent,
        {"eps_lexical": eps_lexical, "eps_semantic_cos": eps_semantic},
        {"candidates": args.candidates, "questions": ",".join(args.questions)},
        [out], None, started,
    )
    _print_table(
        [["originals", str(len(grouped))], ["candidates", str(sum(map(len, grouped.values())))],
         ["selected", str(selected_count)]],
        header=("field", "value"),
    )
    return 0


def _train_config_from(args: argparse.Namespace, config: dict[str, str]) -> TrainConfig:
    fields = {
        "learning_rate": float, "batch_size": int, "epochs": int,
        "warmup_fraction": float, "qq_variant": str, "qq_lambda": float,
        "margin_alpha": float, "in_batch_negatives": bool,
        "negatives_per_question": int, "augment_count": int, "seed": int,
        "hash_buckets": int, "dim": int, "selection_metric": str,
    }
    defaults = TrainConfig()
    kwargs = {}
    for name, kind in fields.items():
        default = getattr(defaults, name)
        kwargs[name] = _resolve(args, config, name, kind, default)
    return TrainConfig(**kwargs)


def _cmd_train(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    cfg = _train_config_from(args, config)
    passages = lexindex.passages_by_id(core.load_passages(workdir / args.corpus))
    questions = _load_questions_merged(args.questions, workdir)
    examples = _load_train_examples(workdir / args.train_examples)
    pools = _load_pools(workdir / args.pools) if args.pools else AugmentationPools()
    dev_sets = (
        lexindex.load_candidate_sets(workdir / args.dev_candidates) if args.dev_candidates else ()
    )
    contrast_sets = (
        lexindex.load_candidate_sets(workdir / args.contrast_candidates)
        if args.contrast_candidates
        else ()
    )
    # Pool variants may appear in contrast sets; make them resolvable.
    for paras in pools.paraphrases.values():
        for q in paras:
            questions.setdefault(q.id, q)
    for meqs in pools.meqs.values():
        for m in meqs:
            questions.setdefault(m.question.id, m.question)
    data = TrainData(
        passages=passages,
        questions=questions,
        examples=examples,
        pools=pools,
        dev_sets=dev_sets,
        contrast_sets=contrast_sets,
    )
    out_dir = workdir / args.out_dir
    result = trainer.train(data, cfg, out_dir)
    outputs = [result.metrics_path, result.report_path] + result.checkpoints
    _write_manifest(
        "train", out_dir, asdict(cfg),
        {
            "corpus": args.corpus,
            "train_examples": args.train_examples,
            "pools": args.pools or "",
            "dev_candidates": args.dev_candidates or "",
            "contrast_candidates": args.contrast_candidates or "",
        },
        outputs, cfg.seed, started,
    )
    rows = []
    for entry in result.report["epochs"]:
        rows.append([
            str(entry["epoch"]),
            f"{entry['mean_combined']:.6f}",
            f"{entry.get('dev_mrr', float('nan')):.6f}" if "dev_mrr" in entry else "-",
            f"{entry.get('contrast_mrr', float('nan')):.6f}" if "contrast_mrr" in entry else "-",
        ])
    _print_table(rows, header=("epoch", "loss", "dev_mrr", "contrast_mrr"))
    if result.report["selected"]:
        print(f"selected: {result.report['selected']['checkpoint']} "
              f"({cfg.selection_metric}={result.report['selected']['value']:.6f})")
    return 0


def _cmd_eval_rank(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    model = load_checkpoint(workdir / args.checkpoint)
    questions = _load_questions_merged(args.questions, workdir)
    passages = lexindex.passages_by_id(core.load_passages(workdir / args.corpus))
    sets = lexindex.load_candidate_sets(workdir / args.candidates)
    result = evalsuite.ranking_eval(model, sets, questions, passages)
    metrics = [
        {"metric": "mr", "value": result.mr, "k": None,
         "dataset": args.dataset, "checkpoint": args.checkpoint},
        {"metric": "mrr", "value": result.mrr, "k": None,
         "dataset": args.dataset, "checkpoint": args.checkpoint},
    ]
    report_path = workdir / args.report
    _write_report(report_path, metrics)
    _write_manifest(
        "eval-rank", report_path.parent, {},
        {"checkpoint": args.checkpoint, "candidates": args.candidates}, [report_path],
        None, started,
    )
    _print_table(_metric_rows(metrics), header=("metric", "k", "value"))
    return 0


def _cmd_eval_retrieve(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    model = load_checkpoint(workdir / args.checkpoint)
    questions = _load_questions_merged(args.questions, workdir)
    passages = lexindex.passages_by_id(core.load_passages(workdir / args.corpus))
    ks = [int(k) for k in args.ks.split(",")]
    result = evalsuite.retrieval_eval(model, passages, list(questions.values()), ks)
    metrics = [
        {"metric": "recall", "value": result.recall[k], "k": k,
         "dataset": args.dataset, "checkpoint": args.checkpoint}
        for k in ks
    ]
    report_path = workdir / args.report
    _write_report(report_path, metrics)
    _write_manifest(
        "eval-retrieve", report_path.parent, {"ks": args.ks},
        {"checkpoint": args.checkpoint, "corpus": args.corpus}, [report_path], None, started,
    )
    _print_table(_metric_rows(metrics), header=("metric", "k", "value"))
    return 0


def _cmd_analyze_overlap(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    model = load_checkpoint(workdir / args.checkpoint)
    questions = _load_questions_merged(args.questions, workdir)
    passages = lexindex.passages_by_id(core.load_passages(workdir / args.corpus))
    pairs = [p for p in core.load_pairs(workdir / args.pairs) if p.relation == "meq"]
    value = evalsuite.passage_overlap(model, pairs, questions, passages, k=args.k)
    metrics = [{"metric": "passage_overlap", "value": value, "k": args.k,
                "dataset": args.dataset, "checkpoint": args.checkpoint}]
    report_path = workdir / args.report
    _write_report(report_path, metrics)
    _write_manifest(
        "analyze-overlap", report_path.parent, {"k": args.k},
        {"checkpoint": args.checkpoint, "pairs": args.pairs}, [report_path], None, started,
    )
    _print_table(_metric_rows(metrics), header=("metric", "k", "value"))
    return 0


def _cmd_analyze_identify(args: argparse.Namespace, config: dict[str, str], workdir: Path) -> int:
    started = time.time()
    model = load_checkpoint(workdir / args.checkpoint)
    questions = _load_questions_merged(args.questions, workdir)
    triples = []
    for q_id, para_id, meq_id in _load_triples(workdir / args.triples):
        try:
            triples.append((questions[q_id], questions[para_id], questions[meq_id]))
        except KeyError as exc:
            raise DataError(f"triple references unknown question id {exc}") from exc
    value = evalsuite.identification_rate(model, triples)
    metrics = [{"metric": "identification_rate", "value": value, "k": None,
                "dataset": args.dataset, "checkpoint": args.checkpoint}]
    report_path = workdir / args.report
    _write_report(report_path, metrics)
    _write_manifest(
        "analyze-identify", report_path.parent, {},
        {"checkpoint": args.checkpoint, "triples": args.triples}, [report_path], None, started,
    )
    _print_table(_metric_rows(metrics), header=("metric", "k", "value"))
    return 0


# --- parser ----------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--workdir", default=".", help="base directory for all paths")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker cap (mirrors RETRIEVAL_LAB_THREADS; execution is single-threaded)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retrieval-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="generate a synthetic world")
    _add_common(p)
    p.add_argument("--out", default="world")
    for name in ("n-entities", "n-attributes", "n-passages", "n-train-questions",
                 "n-contrast-questions", "n-heldout-questions",
                 "paraphrases-per-question", "meqs-per-question", "vocab-size", "seed"):
        p.add_argument(f"--{name}", type=int, default=None)
    p.set_defaults(func=_cmd_gen_world)

    p = sub.add_parser("build-index", help="build the lexical index artifact")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="index.json")
    p.add_argument("--k1", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("build-candidates", help="build ranking candidate sets")
    _add_common(p)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="candidates.jsonl")
    p.set_defaults(func=_cmd_build_candidates)

    p = sub.add_parser("filter-meq", help="filter candidate edited questions")
    _add_common(p)
    p.add_argument("--candidates", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--out", default="pairs.jsonl")
    p.add_argument("--checkpoint")
    p.add_argument("--eps-lexical", type=int, default=None)
    p.add_argument("--eps-semantic-cos", type=float, default=None)
    p.add_argument("--hash-buckets", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_filter_meq)

    p = sub.add_parser("train", help="train the dual encoder")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--train-examples", required=True)
    p.add_argument("--pools")
    p.add_argument("--dev-candidates")
    p.add_argument("--contrast-candidates")
    p.add_argument("--out-dir", default="run")
    for name, kind in (
        ("learning-rate", float), ("batch-size", int), ("epochs", int),
        ("warmup-fraction", float), ("qq-variant", str), ("qq-lambda", float),
        ("margin-alpha", float), ("negatives-per-question", int),
        ("augment-count", int), ("seed", int), ("hash-buckets", int),
        ("dim", int), ("selection-metric", str),
    ):
        p.add_argument(f"--{name}", type=kind, default=None)
    p.add_argument("--in-batch-negatives", type=str, default=None,
                   help="true/false; include other batch questions as negatives")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-rank", help="ranking evaluation (mean rank, MRR)")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dataset", default="default")
    p.add_argument("--report", default="rank_report.json")
    p.set_defaults(func=_cmd_eval_rank)

    p = sub.add_parser("eval-retrieve", help="retrieval evaluation (recall at k)")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--ks", default="1,5,20")
    p.add_argument("--dataset", default="default")
    p.add_argument("--report", default="retrieve_report.json")
    p.set_defaults(func=_cmd_eval_retrieve)

    p = sub.add_parser("analyze-overlap", help="top-k retrieval overlap for edited pairs")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--dataset", default="default")
    p.add_argument("--report", default="overlap_report.json")
    p.set_defaults(func=_cmd_analyze_overlap)

    p = sub.add_parser("analyze-identify", help="paraphrase vs edited-question identification")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--questions", action="append", required=True)
    p.add_argument("--dataset", default="default")
    p.add_argument("--report", default="identify_report.json")
    p.set_defaults(func=_cmd_analyze_identify)

    return parser


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    config = {}
    workdir = Path(args.workdir)
    if args.config:
        try:
            config = load_kv_config(workdir / args.config)
        except _DATA_ERRORS as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    if args.threads is None:
        env = os.environ.get("RETRIEVAL_LAB_THREADS")
        args.threads = int(env) if env else 1
    # In-batch negatives arrives as a string so the config file can override it.
    if getattr(args, "in_batch_negatives", None) is not None:
        args.in_batch_negatives = _coerce(args.in_batch_negatives, bool)
    try:
        return args.func(args, config, workdir)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
