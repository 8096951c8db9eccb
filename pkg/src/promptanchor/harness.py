"""Evaluation protocol: per-template accuracy, ablations, sensitivity,
and the two few-shot baselines.

Dataset files are line-delimited JSON. Closed-set rows carry
``{"id", "text", "label"}``; multiple-choice rows carry
``{"id", "premise", "choices", "answer"}``. Embedding stores are aligned
to datasets by row order, and ids must agree so misalignment is caught
rather than silently scored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AlignmentError, FormatError, NumericError, ValidationError
from .index import FlatIndex, PartitionedIndex
from .scoring import (
    MODE_MULTI,
    MODE_NONE,
    MODE_SINGLE,
    LabelAnchorSet,
    VerbalizerSpec,
    anchors_from_verbalizer,
    build_label_anchors,
    classify,
    classify_batch,
)
from .store import EmbeddingStore
from .util import parallel_map

ABLATION_MODES = (MODE_NONE, MODE_SINGLE, MODE_MULTI)


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class ClosedSetInstance:
    id: str
    text: str
    gold: int


@dataclass
class ClosedSetDataset:
    instances: list[ClosedSetInstance]
    num_classes: int

    def __len__(self) -> int:
        return len(self.instances)


@dataclass
class MultipleChoiceInstance:
    id: str
    premise: str
    choices: list[str]
    gold: int


@dataclass
class MultipleChoiceDataset:
    instances: list[MultipleChoiceInstance]

    def __len__(self) -> int:
        return len(self.instances)


def _read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            rows.append(obj)
    return rows


def load_closed_set(path: str | Path, num_classes: int | None = None) -> ClosedSetDataset:
    """Load ``{"id", "text", "label"}`` rows; class count inferred if omitted."""
    instances = []
    seen: set[str] = set()
    for i, obj in enumerate(_read_jsonl(path)):
        for key in ("id", "text", "label"):
            if key not in obj:
                raise FormatError(f"{path}: row {i} is missing {key!r}")
        rid = str(obj["id"])
        if rid in seen:
            raise ValidationError(f"{path}: duplicate instance id {rid!r}")
        seen.add(rid)
        gold = int(obj["label"])
        if gold < 0:
            raise ValidationError(f"{path}: instance {rid!r} has negative label {gold}")
        instances.append(ClosedSetInstance(id=rid, text=str(obj["text"]), gold=gold))
    inferred = max((inst.gold for inst in instances), default=-1) + 1
    if num_classes is None:
        num_classes = inferred
    elif inferred > num_classes:
        raise ValidationError(
            f"{path}: labels reach {inferred - 1}, num_classes is {num_classes}"
        )
    return ClosedSetDataset(instances=instances, num_classes=num_classes)


def load_multiple_choice(path: str | Path) -> MultipleChoiceDataset:
    """Load ``{"id", "premise", "choices", "answer"}`` rows."""
    instances = []
    seen: set[str] = set()
    for i, obj in enumerate(_read_jsonl(path)):
        for key in ("id", "premise", "choices", "answer"):
            if key not in obj:
                raise FormatError(f"{path}: row {i} is missing {key!r}")
        rid = str(obj["id"])
        if rid in seen:
            raise ValidationError(f"{path}: duplicate instance id {rid!r}")
        seen.add(rid)
        choices = [str(c) for c in obj["choices"]]
        if len(choices) < 2:
            raise ValidationError(f"{path}: instance {rid!r} has {len(choices)} choices")
        gold = int(obj["answer"])
        if not 0 <= gold < len(choices):
            raise ValidationError(f"{path}: instance {rid!r} answer {gold} out of range")
        instances.append(
            MultipleChoiceInstance(id=rid, premise=str(obj["premise"]), choices=choices, gold=gold)
        )
    return MultipleChoiceDataset(instances=instances)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    """Per-template accuracies with population statistics."""

    per_template_accuracy: list[float]
    mean: float
    std: float
    min: float
    max: float
    per_instance: list[dict] | None = None

    @classmethod
    def from_accuracies(
        cls, accuracies: Sequence[float], per_instance: list[dict] | None = None
    ) -> "EvalReport":
        accs = [float(a) for a in accuracies]
        if not accs:
            raise ValidationError("a report needs at least one accuracy")
        mean = math.fsum(accs) / len(accs)
        var = math.fsum((a - mean) ** 2 for a in accs) / len(accs)
        return cls(
            per_template_accuracy=accs,
            mean=mean,
            std=math.sqrt(var),
            min=min(accs),
            max=max(accs),
            per_instance=per_instance,
        )

    def to_dict(self) -> dict:
        doc = {
            "per_template_accuracy": self.per_template_accuracy,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
        }
        if self.per_instance is not None:
            doc["per_instance"] = self.per_instance
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            per_template_accuracy=[float(a) for a in doc["per_template_accuracy"]],
            mean=float(doc["mean"]),
            std=float(doc["std"]),
            min=float(doc["min"]),
            max=float(doc["max"]),
            per_instance=doc.get("per_instance"),
        )


def _check_store_alignment(
    store: EmbeddingStore, ids: list[str], what: str
) -> None:
    if store.count != len(ids):
        raise AlignmentError(
            f"{what}: store has {store.count} rows, dataset has {len(ids)} instances"
        )
    for i, (sid, expected) in enumerate(zip(store.ids, ids)):
        if sid != expected:
            raise AlignmentError(
                f"{what}: row {i} id {sid!r} does not match instance id {expected!r}"
            )


# ---------------------------------------------------------------------------
# Zero-shot evaluation


def evaluate_closed_set(
    dataset: ClosedSetDataset,
    test_store: EmbeddingStore,
    spec: VerbalizerSpec,
    prompt_store: EmbeddingStore,
    corpus_index: FlatIndex | PartitionedIndex | None,
    mode: str,
    k: int,
    n: int,
    threads: int = 1,
    collect_detail: bool = False,
) -> EvalReport:
    """Classify every instance under every template and aggregate.

    The test store must be normalized and row-aligned (order and ids) with
    the dataset. Anchors are built once per template and reused for all
    instances, since retrieval queries depend only on prompts.
    """
    if not test_store.normalized:
        raise ValidationError("test store must be normalized")
    _check_store_alignment(test_store, [inst.id for inst in dataset.instances], "test store")
    if dataset.num_classes > spec.num_labels:
        raise AlignmentError(
            f"dataset has {dataset.num_classes} classes, verbalizer defines {spec.num_labels}"
        )
    if not spec.templates:
        raise ValidationError("verbalizer has no templates")

    inputs = test_store.as_float64()
    accuracies: list[float] = []
    detail: list[dict] = [] if collect_detail else None
    for t in range(len(spec.templates)):
        anchors = anchors_from_verbalizer(spec, t, prompt_store, corpus_index, k, n, mode)
        predictions = classify_batch(inputs, anchors, threads=threads)
        correct = 0
        for inst, pred in zip(dataset.instances, predictions):
            if pred.predicted == inst.gold:
                correct += 1
            if collect_detail:
                detail.append(
                    {
                        "id": inst.id,
                        "template_index": t,
                        "totals": [float(v) for v in pred.total],
                        "predicted": pred.predicted,
                        "gold": inst.gold,
                        "tie": pred.tie,
                    }
                )
        accuracies.append(correct / len(dataset) if len(dataset) else 0.0)
    return EvalReport.from_accuracies(accuracies, per_instance=detail)


def evaluate_multiple_choice(
    dataset: MultipleChoiceDataset,
    premise_store: EmbeddingStore,
    choice_store: EmbeddingStore,
    corpus_index: FlatIndex | PartitionedIndex | None,
    k: int,
    mode: str = MODE_SINGLE,
    threads: int = 1,
    collect_detail: bool = False,
) -> EvalReport:
    """Score each instance against its own candidate set.

    The premise store is row-aligned with instances. The choice store is
    the flattened choices in instance order, one row per choice, with ids
    ``<instance_id>#<choice_index>``; its texts are the rendered choice
    prompts and double as the retrieval queries.
    """
    if mode not in (MODE_NONE, MODE_SINGLE):
        raise ValidationError(f"multiple choice supports modes none/single_query, got {mode!r}")
    for store, what in ((premise_store, "premise store"), (choice_store, "choice store")):
        if not store.normalized:
            raise ValidationError(f"{what} must be normalized")
    _check_store_alignment(premise_store, [inst.id for inst in dataset.instances], "premise store")
    expected_choice_ids = [
        f"{inst.id}#{j}" for inst in dataset.instances for j in range(len(inst.choices))
    ]
    _check_store_alignment(choice_store, expected_choice_ids, "choice store")

    premises = premise_store.as_float64()
    choice_vecs = choice_store.as_float64()
    offsets = np.cumsum([0] + [len(inst.choices) for inst in dataset.instances])

    def run_one(i: int) -> tuple[bool, dict | None]:
        inst = dataset.instances[i]
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        queries = [
            (j, [(choice_store.metadata[lo + j][1], choice_vecs[lo + j])])
            for j in range(hi - lo)
        ]
        anchors = build_label_anchors(queries, corpus_index, k, 1, mode)
        pred = classify(premises[i], anchors)
        row = None
        if collect_detail:
            row = {
                "id": inst.id,
                "template_index": 0,
                "totals": [float(v) for v in pred.total],
                "predicted": pred.predicted,
                "gold": inst.gold,
                "tie": pred.tie,
            }
        return pred.predicted == inst.gold, row

    results = parallel_map(run_one, range(len(dataset)), threads)
    correct = sum(1 for ok, _ in results if ok)
    detail = [row for _, row in results if row is not None] if collect_detail else None
    acc = correct / len(dataset) if len(dataset) else 0.0
    return EvalReport.from_accuracies([acc], per_instance=detail)


def ablation_run(
    dataset: ClosedSetDataset,
    test_store: EmbeddingStore,
    spec: VerbalizerSpec,
    prompt_store: EmbeddingStore,
    corpus_index: FlatIndex | PartitionedIndex | None,
    k: int,
    n: int,
    threads: int = 1,
    collect_detail: bool = False,
) -> dict[str, EvalReport]:
    """Evaluate the retrieval strategies {none, single_query, multi_synonym}
    on identical inputs, keyed by mode."""
    reports: dict[str, EvalReport] = {}
    for mode in ABLATION_MODES:
        mode_n = {MODE_NONE: n, MODE_SINGLE: 1, MODE_MULTI: n}[mode]
        reports[mode] = evaluate_closed_set(
            dataset,
            test_store,
            spec,
            prompt_store,
            corpus_index,
            mode,
            k,
            mode_n,
            threads=threads,
            collect_detail=collect_detail,
        )
    return reports


def sensitivity_report(
    dataset: ClosedSetDataset,
    test_store: EmbeddingStore,
    spec: VerbalizerSpec,
    prompt_store: EmbeddingStore,
    corpus_index: FlatIndex | PartitionedIndex | None,
    mode: str,
    k: int,
    n: int,
    threads: int = 1,
    collect_detail: bool = False,
) -> EvalReport:
    """Accuracy spread across a template battery (needs >= 2 templates)."""
    if len(spec.templates) < 2:
        raise ValidationError(
            f"sensitivity needs >= 2 templates, verbalizer has {len(spec.templates)}"
        )
    return evaluate_closed_set(
        dataset,
        test_store,
        spec,
        prompt_store,
        corpus_index,
        mode,
        k,
        n,
        threads=threads,
        collect_detail=collect_detail,
    )


# ---------------------------------------------------------------------------
# Few-shot baselines


@dataclass
class FewShotConfig:
    """Protocol knobs for the few-shot baselines.

    Seeds are ``base_seed + i`` for i in [0, num_seeds); recording the base
    seed is enough to reproduce a run.
    """

    shots: int
    num_seeds: int = 50
    base_seed: int = 0
    learning_rate: float = 0.1
    iterations: int = 500
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if self.shots < 1:
            raise ValidationError(f"shots must be >= 1, got {self.shots}")
        if self.num_seeds < 1:
            raise ValidationError(f"num_seeds must be >= 1, got {self.num_seeds}")

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.num_seeds)]


@dataclass
class FewShotResult:
    per_seed_accuracy: list[float]
    mean: float
    std: float

    @classmethod
    def from_accuracies(cls, accs: Sequence[float]) -> "FewShotResult":
        accs = [float(a) for a in accs]
        mean = math.fsum(accs) / len(accs)
        var = math.fsum((a - mean) ** 2 for a in accs) / len(accs)
        return cls(per_seed_accuracy=accs, mean=mean, std=math.sqrt(var))

    def to_dict(self) -> dict:
        return {"per_seed_accuracy": self.per_seed_accuracy, "mean": self.mean, "std": self.std}


def sample_support(
    labels: np.ndarray, num_classes: int, shots: int, seed: int
) -> np.ndarray:
    """Draw ``shots`` row indices per class without replacement."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    picks = []
    for c in range(num_classes):
        pool = np.flatnonzero(labels == c)
        if pool.size == 0:
            raise ValidationError(f"class {c} has no support examples")
        if pool.size < shots:
            raise ValidationError(
                f"class {c} has {pool.size} support examples, needs {shots}"
            )
        picks.append(rng.choice(pool, size=shots, replace=False))
    return np.concatenate(picks)


def class_prototypes(
    vectors: np.ndarray, labels: np.ndarray, num_classes: int
) -> np.ndarray:
    """Unit-renormalized per-class mean embeddings."""
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    protos = np.zeros((num_classes, vectors.shape[1]), dtype=np.float64)
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            raise ValidationError(f"class {c} has no support examples")
        mean = vectors[members].mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            raise NumericError(f"class {c} prototype collapsed to the zero vector")
        protos[c] = mean / norm
    return protos


def _prototype_predict(queries: np.ndarray, protos: np.ndarray) -> np.ndarray:
    qn = np.linalg.norm(queries, axis=1, keepdims=True)
    sims = (queries @ protos.T) / qn  # prototypes are unit by construction
    return np.argmax(sims, axis=1)


def prototypical_baseline(
    support_vectors: np.ndarray,
    support_labels: np.ndarray,
    query_vectors: np.ndarray,
    query_labels: np.ndarray,
    num_classes: int,
    config: FewShotConfig,
    threads: int = 1,
) -> FewShotResult:
    """Nearest-class-mean classification over seeded support draws."""
    support_vectors = np.asarray(support_vectors, dtype=np.float64)
    query_vectors = np.asarray(query_vectors, dtype=np.float64)
    query_labels = np.asarray(query_labels, dtype=np.int64)

    def run_seed(seed: int) -> float:
        idx = sample_support(support_labels, num_classes, config.shots, seed)
        protos = class_prototypes(
            support_vectors[idx], np.asarray(support_labels)[idx], num_classes
        )
        pred = _prototype_predict(query_vectors, protos)
        return float(np.mean(pred == query_labels))

    return FewShotResult.from_accuracies(parallel_map(run_seed, config.seeds, threads))


def softmax_xent_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy with L2 on the weights (not the bias).

    Returns (loss, d_loss/d_weights, d_loss/d_bias), all double precision.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    # non-finite inputs surface as a non-finite loss, caught by the trainer
    with np.errstate(over="ignore", invalid="ignore"):
        logits = x @ weights + bias
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        probs = exp / exp.sum(axis=1, keepdims=True)
        nll = -np.log(probs[np.arange(n), y])
        loss = float(nll.mean() + 0.5 * l2 * np.sum(weights * weights))
        grad_logits = probs
        grad_logits[np.arange(n), y] -= 1.0
        grad_logits /= n
        d_weights = x.T @ grad_logits + l2 * weights
        d_bias = grad_logits.sum(axis=0)
    return loss, d_weights, d_bias


def train_logistic_head(
    x: np.ndarray,
    y: np.ndarray,
    num_classes: int,
    learning_rate: float = 0.1,
    iterations: int = 500,
    l2: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Full-batch gradient descent from zero-initialized parameters."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    weights = np.zeros((x.shape[1], num_classes), dtype=np.float64)
    bias = np.zeros(num_classes, dtype=np.float64)
    loss = float(np.log(num_classes))
    for it in range(iterations):
        loss, d_w, d_b = softmax_xent_loss_and_grad(weights, bias, x, y, l2)
        if not math.isfinite(loss):
            raise NumericError(
                f"non-finite loss {loss} at iteration {it} "
                f"(lr={learning_rate}, l2={l2}, n={x.shape[0]})"
            )
        weights -= learning_rate * d_w
        bias -= learning_rate * d_b
    return weights, bias, loss


def linear_probe_baseline(
    support_vectors: np.ndarray,
    support_labels: np.ndarray,
    query_vectors: np.ndarray,
    query_labels: np.ndarray,
    num_classes: int,
    config: FewShotConfig,
    threads: int = 1,
) -> FewShotResult:
    """Logistic head trained per seed on the sampled support set.

    Uses the same seed-to-sample derivation as the prototypical baseline,
    so both methods see identical support draws for a given seed.
    """
    support_vectors = np.asarray(support_vectors, dtype=np.float64)
    query_vectors = np.asarray(query_vectors, dtype=np.float64)
    query_labels = np.asarray(query_labels, dtype=np.int64)

    def run_seed(seed: int) -> float:
        idx = sample_support(support_labels, num_classes, config.shots, seed)
        weights, bias, _ = train_logistic_head(
            support_vectors[idx],
            np.asarray(support_labels)[idx],
            num_classes,
            learning_rate=config.learning_rate,
            iterations=config.iterations,
            l2=config.l2,
        )
        logits = query_vectors @ weights + bias
        pred = np.argmax(logits, axis=1)
        return float(np.mean(pred == query_labels))

    return FewShotResult.from_accuracies(parallel_map(run_seed, config.seeds, threads))
