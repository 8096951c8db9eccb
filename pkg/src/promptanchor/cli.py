"""Batch command-line surface for scripted experiments.

Every command is deterministic given identical inputs and --seed: report
files are byte-identical across reruns and across --threads values, and
no command mutates its inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import harness, reports, scoring
from .errors import PromptAnchorError, UsageError, ValidationError
from .index import (
    FlatIndex,
    PartitionedIndex,
    build_flat_index,
    build_partitioned_index,
    load_index,
    query_top_k,
    save_index,
)
from .store import read_embedding_file, validate_store

EXIT_CODES = """\
exit codes:
  0  success
  2  bad arguments or unusable option combination
  3  file format error (missing file, bad magic/version, corruption)
  4  alignment or validation error (invariant/precondition violations)
  5  internal numeric error (e.g. non-finite training loss)
"""


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _shots_list(value: str) -> list[int]:
    try:
        shots = [int(s) for s in value.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shots list {value!r}") from exc
    if not shots or any(s < 1 for s in shots):
        raise argparse.ArgumentTypeError(f"bad shots list {value!r}")
    return shots


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptanchor",
        description="Zero-shot classification by similarity to label prompts "
        "and retrieved pseudo-label prompts.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(
            name,
            help=help_text,
            epilog=EXIT_CODES,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        return p

    p = add("build-index", "build and persist a search index over a corpus store")
    p.add_argument("--corpus", required=True, help="corpus embedding store stem")
    p.add_argument("--out", required=True, help="output .ridx path")
    p.add_argument("--kind", choices=("flat", "partitioned"), default="flat")
    p.add_argument("--partitions", type=_positive_int, help="partition count (partitioned)")
    p.add_argument("--probes", type=_positive_int, default=1, help="default probes (partitioned)")
    p.add_argument("--seed", type=int, default=0, help="clustering init seed")
    p.add_argument("--kmeans-iters", type=_positive_int, default=20)

    p = add("retrieve", "print the top-k corpus sentences for a stored query vector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", help=".ridx file; omitted builds a flat index in memory")
    p.add_argument("--query-store", help="store holding the query row (default: corpus)")
    p.add_argument("--query-id", required=True)
    p.add_argument("--top-k", type=_positive_int, default=5)

    common_eval = {
        "--verbalizer": dict(help="verbalizer JSON file (closed_set tasks)"),
        "--prompt-store": dict(help="store of prompt embeddings (closed_set tasks)"),
        "--corpus": dict(help="corpus store stem (retrieval modes)"),
        "--index": dict(help=".ridx file; omitted builds a flat index"),
        "--top-k": dict(type=_positive_int, default=25, help="retrieved sentences per label"),
        "--num-synonyms": dict(
            type=_positive_int, default=5, help="queries per label in multi_synonym mode"
        ),
        "--threads": dict(type=_positive_int, default=1),
        "--seed": dict(type=int, default=0),
    }

    def add_eval_flags(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
        for flag, kwargs in common_eval.items():
            p.add_argument(flag, **kwargs)
        if with_mode:
            p.add_argument(
                "--mode",
                choices=scoring.MODES,
                default=None,
                help="retrieval strategy (default: multi_synonym closed-set, "
                "single_query multiple-choice)",
            )

    p = add("classify", "score and label every row of an input store")
    p.add_argument("--input-store", required=True)
    add_eval_flags(p)
    p.add_argument("--template", type=int, default=0, help="template index to render")
    p.add_argument("--out", help="JSON predictions file")

    p = add("evaluate", "accuracy over a labeled dataset, averaged over templates")
    p.add_argument("--task", choices=("closed_set", "multiple_choice"), default="closed_set")
    p.add_argument("--dataset", required=True, help="dataset JSONL file")
    p.add_argument("--test-store", help="input embeddings (closed_set)")
    p.add_argument("--premise-store", help="premise embeddings (multiple_choice)")
    p.add_argument("--choice-store", help="choice prompt embeddings (multiple_choice)")
    add_eval_flags(p)
    p.add_argument("--per-instance", action="store_true", help="keep per-instance rows")
    p.add_argument("--out", help="JSON report file")

    p = add("ablate", "evaluate retrieval strategies none/single_query/multi_synonym")
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-store", required=True)
    add_eval_flags(p, with_mode=False)
    p.add_argument("--per-instance", action="store_true")
    p.add_argument("--out", help="JSON report file")

    p = add("sensitivity", "per-template accuracy spread over a template battery")
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-store", required=True)
    add_eval_flags(p)
    p.add_argument("--per-instance", action="store_true")
    p.add_argument("--out", help="JSON report file")

    p = add("fewshot", "prototypical / linear-probe baselines over seeded support draws")
    p.add_argument("--train-dataset", required=True)
    p.add_argument("--train-store", required=True)
    p.add_argument("--test-dataset", required=True)
    p.add_argument("--test-store", required=True)
    p.add_argument("--method", choices=("prototypical", "linear_probe"), required=True)
    p.add_argument("--shots", type=_shots_list, default=[2, 4, 8, 12, 16])
    p.add_argument("--num-seeds", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed+i")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", help="JSON report file")

    p = add("export-csv", "flatten a per-instance JSON report to CSV")
    p.add_argument("--report", required=True, help="JSON report with per-instance rows")
    p.add_argument("--out", required=True, help="CSV output path")

    p = add("validate", "check a store against every format invariant")
    p.add_argument("--store", required=True)

    return parser


# ---------------------------------------------------------------------------
# Shared loading helpers


def _load_verbalizer(path: str | None) -> scoring.VerbalizerSpec:
    if not path:
        raise UsageError("--verbalizer is required for this task")
    return scoring.load_verbalizer(path)


def _default_mode(args: argparse.Namespace) -> str:
    if getattr(args, "mode", None):
        return args.mode
    if getattr(args, "task", "closed_set") == "multiple_choice":
        return scoring.MODE_SINGLE
    return scoring.MODE_MULTI


def _resolve_index(
    args: argparse.Namespace, mode: str
) -> FlatIndex | PartitionedIndex | None:
    """Load or build the corpus index when the mode retrieves."""
    if mode == scoring.MODE_NONE:
        return None
    if not args.corpus:
        raise UsageError(f"--corpus is required for mode {mode!r}")
    corpus = read_embedding_file(args.corpus)
    if args.index:
        return load_index(args.index, corpus)
    return build_flat_index(corpus)


def _store(path: str | None, what: str):
    if not path:
        raise UsageError(f"--{what} is required for this task")
    return read_embedding_file(path)


# ---------------------------------------------------------------------------
# Commands


def cmd_build_index(args: argparse.Namespace) -> int:
    corpus = read_embedding_file(args.corpus)
    start = time.perf_counter()
    if args.kind == "flat":
        index = build_flat_index(corpus)
    else:
        if args.partitions is None:
            raise UsageError("--partitions is required for --kind partitioned")
        index = build_partitioned_index(
            corpus, args.partitions, args.probes, seed=args.seed, max_iters=args.kmeans_iters
        )
    elapsed = time.perf_counter() - start
    save_index(index, args.out)
    extra = ""
    if isinstance(index, PartitionedIndex):
        extra = f" partitions={index.num_partitions} probes={index.probes}"
    print(
        f"kind={args.kind} count={index.size} dim={index.dim}"
        f"{extra} build_time_s={elapsed:.3f} out={args.out}"
    )
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    corpus = read_embedding_file(args.corpus)
    index = load_index(args.index, corpus) if args.index else build_flat_index(corpus)
    query_store = read_embedding_file(args.query_store) if args.query_store else corpus
    row = query_store.row_for_id(args.query_id)
    if row is None:
        raise ValidationError(f"unknown query id {args.query_id!r}")
    result = query_top_k(index, query_store.vectors[row].astype(np.float64), args.top_k)
    for rank, (rid, sim) in enumerate(result.hits, start=1):
        cid, text = corpus.metadata[rid]
        print(f"{rank:>4}  {sim:.6f}  {cid}  {text}")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    inputs = _store(args.input_store, "input-store")
    if not inputs.normalized:
        raise ValidationError("input store must be normalized")
    spec = _load_verbalizer(args.verbalizer)
    prompt_store = _store(args.prompt_store, "prompt-store")
    mode = _default_mode(args)
    n = 1 if mode != scoring.MODE_MULTI else args.num_synonyms
    corpus_index = _resolve_index(args, mode)
    anchors = scoring.anchors_from_verbalizer(
        spec, args.template, prompt_store, corpus_index, args.top_k, n, mode
    )
    predictions = scoring.classify_batch(inputs.as_float64(), anchors, threads=args.threads)
    rows = []
    counts = [0] * anchors.num_labels
    for (rid, _text), pred in zip(inputs.metadata, predictions):
        counts[pred.predicted] += 1
        rows.append(
            {
                "id": rid,
                "direct": [float(v) for v in pred.direct],
                "retrieval": [float(v) for v in pred.retrieval],
                "totals": [float(v) for v in pred.total],
                "predicted": pred.predicted,
                "tie": pred.tie,
            }
        )
    doc = {
        "config": {
            "mode": mode,
            "top_k": args.top_k,
            "num_synonyms": n,
            "template_index": args.template,
        },
        "predictions": rows,
    }
    if args.out:
        reports.write_json_atomic(doc, args.out)
    label_names = [lab.name for lab in spec.labels]
    print(f"classified {len(rows)} inputs")
    print(
        reports.format_table(
            ["class_index", "label", "count"],
            [[i, name, counts[i]] for i, name in enumerate(label_names)],
        ),
        end="",
    )
    return 0


def _closed_set_inputs(args: argparse.Namespace):
    dataset = harness.load_closed_set(args.dataset)
    test_store = _store(args.test_store, "test-store")
    spec = _load_verbalizer(args.verbalizer)
    prompt_store = _store(args.prompt_store, "prompt-store")
    return dataset, test_store, spec, prompt_store


def cmd_evaluate(args: argparse.Namespace) -> int:
    mode = _default_mode(args)
    if args.task == "closed_set":
        if not args.test_store:
            raise UsageError("--test-store is required for --task closed_set")
        dataset, test_store, spec, prompt_store = _closed_set_inputs(args)
        n = 1 if mode != scoring.MODE_MULTI else args.num_synonyms
        corpus_index = _resolve_index(args, mode)
        report = harness.evaluate_closed_set(
            dataset,
            test_store,
            spec,
            prompt_store,
            corpus_index,
            mode,
            args.top_k,
            n,
            threads=args.threads,
            collect_detail=args.per_instance,
        )
        config = {
            "task": args.task,
            "mode": mode,
            "top_k": args.top_k,
            "num_synonyms": n,
            "templates": len(spec.templates),
        }
    else:
        if not args.premise_store or not args.choice_store:
            raise UsageError(
                "--premise-store and --choice-store are required for --task multiple_choice"
            )
        dataset = harness.load_multiple_choice(args.dataset)
        premise_store = read_embedding_file(args.premise_store)
        choice_store = read_embedding_file(args.choice_store)
        corpus_index = _resolve_index(args, mode)
        report = harness.evaluate_multiple_choice(
            dataset,
            premise_store,
            choice_store,
            corpus_index,
            args.top_k,
            mode=mode,
            threads=args.threads,
            collect_detail=args.per_instance,
        )
        config = {"task": args.task, "mode": mode, "top_k": args.top_k}

    doc = {"config": config, "report": report.to_dict()}
    if args.out:
        reports.write_json_atomic(doc, args.out)
    for t, acc in enumerate(report.per_template_accuracy):
        print(f"template {t:>3} accuracy={acc:.4f}")
    print(f"mean_accuracy={report.mean:.4f}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    dataset, test_store, spec, prompt_store = _closed_set_inputs(args)
    corpus_index = _resolve_index(args, scoring.MODE_MULTI)
    results = harness.ablation_run(
        dataset,
        test_store,
        spec,
        prompt_store,
        corpus_index,
        args.top_k,
        args.num_synonyms,
        threads=args.threads,
        collect_detail=args.per_instance,
    )
    doc = {
        "config": {
            "task": "closed_set",
            "top_k": args.top_k,
            "num_synonyms": args.num_synonyms,
            "templates": len(spec.templates),
        },
        "reports": {mode: rep.to_dict() for mode, rep in results.items()},
    }
    if args.out:
        reports.write_json_atomic(doc, args.out)
    table = reports.format_table(
        ["mode", "mean", "std", "min", "max"],
        [
            [mode, f"{r.mean:.4f}", f"{r.std:.4f}", f"{r.min:.4f}", f"{r.max:.4f}"]
            for mode, r in results.items()
        ],
    )
    print(table, end="")
    return 0


def cmd_sensitivity(args: argparse.Namespace) -> int:
    mode = _default_mode(args)
    dataset, test_store, spec, prompt_store = _closed_set_inputs(args)
    n = 1 if mode != scoring.MODE_MULTI else args.num_synonyms
    corpus_index = _resolve_index(args, mode)
    report = harness.sensitivity_report(
        dataset,
        test_store,
        spec,
        prompt_store,
        corpus_index,
        mode,
        args.top_k,
        n,
        threads=args.threads,
        collect_detail=args.per_instance,
    )
    doc = {
        "config": {
            "task": "closed_set",
            "mode": mode,
            "top_k": args.top_k,
            "num_synonyms": n,
            "templates": len(spec.templates),
        },
        "report": report.to_dict(),
    }
    if args.out:
        reports.write_json_atomic(doc, args.out)
    for t, acc in enumerate(report.per_template_accuracy):
        print(f"template {t:>3} accuracy={acc:.4f}")
    print(
        f"templates={len(report.per_template_accuracy)} mean={report.mean:.4f} "
        f"std={report.std:.4f} min={report.min:.4f} max={report.max:.4f}"
    )
    return 0


def cmd_fewshot(args: argparse.Namespace) -> int:
    train_dataset = harness.load_closed_set(args.train_dataset)
    test_dataset = harness.load_closed_set(args.test_dataset)
    train_store = read_embedding_file(args.train_store)
    test_store = read_embedding_file(args.test_store)
    harness._check_store_alignment(
        train_store, [i.id for i in train_dataset.instances], "train store"
    )
    harness._check_store_alignment(
        test_store, [i.id for i in test_dataset.instances], "test store"
    )
    num_classes = max(train_dataset.num_classes, test_dataset.num_classes)
    support = train_store.as_float64()
    support_labels = np.array([i.gold for i in train_dataset.instances])
    queries = test_store.as_float64()
    query_labels = np.array([i.gold for i in test_dataset.instances])

    fn = (
        harness.prototypical_baseline
        if args.method == "prototypical"
        else harness.linear_probe_baseline
    )
    results = {}
    for shots in args.shots:
        config = harness.FewShotConfig(
            shots=shots,
            num_seeds=args.num_seeds,
            base_seed=args.seed,
            learning_rate=args.learning_rate,
            iterations=args.iterations,
            l2=args.l2,
        )
        results[shots] = fn(
            support, support_labels, queries, query_labels, num_classes, config,
            threads=args.threads,
        )
    doc = {
        "method": args.method,
        "config": {
            "shots": args.shots,
            "num_seeds": args.num_seeds,
            "base_seed": args.seed,
            "learning_rate": args.learning_rate,
            "iterations": args.iterations,
            "l2": args.l2,
        },
        "results": {str(s): r.to_dict() for s, r in results.items()},
    }
    if args.out:
        reports.write_json_atomic(doc, args.out)
    table = reports.format_table(
        ["shots", "mean", "std"],
        [[s, f"{r.mean:.4f}", f"{r.std:.4f}"] for s, r in results.items()],
    )
    print(f"method={args.method} seeds={args.num_seeds} base_seed={args.seed}")
    print(table, end="")
    return 0


def cmd_export_csv(args: argparse.Namespace) -> int:
    path = Path(args.report)
    if not path.exists():
        raise UsageError(f"missing report file: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    per_instance = None
    if isinstance(doc, dict):
        if "report" in doc and isinstance(doc["report"], dict):
            per_instance = doc["report"].get("per_instance")
        if per_instance is None:
            per_instance = doc.get("per_instance")
    if not per_instance:
        raise ValidationError(
            f"{path}: no per-instance rows; rerun the evaluation with --per-instance"
        )
    csv_text = reports.detail_rows_to_csv(per_instance)
    reports.write_text_atomic(csv_text, args.out)
    print(f"wrote {len(per_instance)} rows to {args.out}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    store = read_embedding_file(args.store)
    report = validate_store(store)
    if report.ok:
        print(
            f"ok count={store.count} dim={store.dim} "
            f"normalized={'true' if store.normalized else 'false'}"
        )
        return 0
    for issue in report.issues:
        print(f"violation[{issue.kind}]: {issue.message}")
    return 4


_COMMANDS = {
    "build-index": cmd_build_index,
    "retrieve": cmd_retrieve,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sensitivity": cmd_sensitivity,
    "fewshot": cmd_fewshot,
    "export-csv": cmd_export_csv,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PromptAnchorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint() -> None:
    sys.exit(main())
