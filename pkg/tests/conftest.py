"""Shared fixtures: random unit vectors and a provably separable task.

The separable geometry puts the two class directions on orthogonal axes
and confines all noise (inputs, synonym prompts, corpus sentences) to
disjoint subspaces that are also orthogonal to both class directions.
Cross-class similarities are then exactly zero while same-class
similarities stay above cos(2 * max_angle), so the correct argmax is
provable for every instance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from promptanchor import (
    ClosedSetDataset,
    ClosedSetInstance,
    EmbeddingStore,
    FlatIndex,
    LabelDef,
    VerbalizerSpec,
    build_flat_index,
    store_from_vectors,
    write_store,
)

DIM = 16
MAX_ANGLE_DEG = 25.0


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def normalized_store(vectors, ids=None, texts=None) -> EmbeddingStore:
    """Unit-normalize rows in float64 and build a flagged store."""
    v = np.asarray(vectors, dtype=np.float64)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return store_from_vectors(v.astype("<f4"), ids=ids, texts=texts, normalized=True)


@dataclass
class SeparableTask:
    spec: VerbalizerSpec
    dataset: ClosedSetDataset
    test_store: EmbeddingStore
    prompt_store: EmbeddingStore
    corpus_store: EmbeddingStore
    corpus_index: FlatIndex
    class_dirs: np.ndarray
    train_dataset: ClosedSetDataset
    train_store: EmbeddingStore


LABEL_WORDS = {
    0: ("calm", ["steady", "quiet", "mild", "soft"]),
    1: ("storm", ["thunder", "gale", "tempest", "squall"]),
}


def _cone_point(rng: np.random.Generator, class_id: int, dim: int) -> np.ndarray:
    """Unit vector within MAX_ANGLE_DEG of the class axis, noise confined
    to that class's private subspace."""
    noise_dims = (dim - 2) // 2
    lo = 2 + class_id * noise_dims
    u = np.zeros(dim)
    u[lo : lo + noise_dims] = rng.standard_normal(noise_dims)
    u /= np.linalg.norm(u)
    theta = math.radians(rng.uniform(3.0, MAX_ANGLE_DEG))
    v = np.zeros(dim)
    v[class_id] = math.cos(theta)
    return v + math.sin(theta) * u


def make_separable_task(
    seed: int = 11,
    templates: list[str] | None = None,
    n_test: int = 100,
    n_train_per_class: int = 30,
    corpus_per_class: int = 40,
    dim: int = DIM,
) -> SeparableTask:
    rng = np.random.default_rng(seed)
    if templates is None:
        templates = ["Signal reads {label} today."]
    labels = [
        LabelDef(class_index=c, name=name, synonyms=list(syns))
        for c, (name, syns) in LABEL_WORDS.items()
    ]
    spec = VerbalizerSpec(task_kind="closed_set", templates=templates, labels=labels)

    class_dirs = np.zeros((2, dim))
    class_dirs[0, 0] = 1.0
    class_dirs[1, 1] = 1.0

    prompt_vecs, prompt_ids, prompt_texts = [], [], []
    seen_texts: set[str] = set()
    for t, template in enumerate(templates):
        for c, (name, syns) in LABEL_WORDS.items():
            for j, word in enumerate([name] + syns):
                text = template.replace("{label}", word)
                if text in seen_texts:
                    continue
                seen_texts.add(text)
                vec = class_dirs[c] if j == 0 else _cone_point(rng, c, dim)
                prompt_vecs.append(vec)
                prompt_ids.append(f"p{t}_{c}_{j}")
                prompt_texts.append(text)
    prompt_store = normalized_store(np.array(prompt_vecs), prompt_ids, prompt_texts)

    corpus_vecs, corpus_ids, corpus_texts = [], [], []
    for c in (0, 1):
        for i in range(corpus_per_class):
            corpus_vecs.append(_cone_point(rng, c, dim))
            corpus_ids.append(f"c{c}_{i:03d}")
            corpus_texts.append(f"corpus sentence {c}-{i}")
    corpus_store = normalized_store(np.array(corpus_vecs), corpus_ids, corpus_texts)

    test_vecs, instances = [], []
    for i in range(n_test):
        gold = i % 2
        test_vecs.append(_cone_point(rng, gold, dim))
        instances.append(ClosedSetInstance(id=f"t{i:04d}", text=f"input {i}", gold=gold))
    test_store = normalized_store(
        np.array(test_vecs), [inst.id for inst in instances], [inst.text for inst in instances]
    )
    dataset = ClosedSetDataset(instances=instances, num_classes=2)

    train_vecs, train_instances = [], []
    for i in range(2 * n_train_per_class):
        gold = i % 2
        train_vecs.append(_cone_point(rng, gold, dim))
        train_instances.append(
            ClosedSetInstance(id=f"r{i:04d}", text=f"train {i}", gold=gold)
        )
    train_store = normalized_store(
        np.array(train_vecs),
        [inst.id for inst in train_instances],
        [inst.text for inst in train_instances],
    )
    train_dataset = ClosedSetDataset(instances=train_instances, num_classes=2)

    return SeparableTask(
        spec=spec,
        dataset=dataset,
        test_store=test_store,
        prompt_store=prompt_store,
        corpus_store=corpus_store,
        corpus_index=build_flat_index(corpus_store),
        class_dirs=class_dirs,
        train_dataset=train_dataset,
        train_store=train_store,
    )


@pytest.fixture
def separable_task() -> SeparableTask:
    return make_separable_task()


def write_task_files(task: SeparableTask, root: Path) -> dict[str, str]:
    """Persist every piece of a task for CLI runs; returns path strings."""
    root.mkdir(parents=True, exist_ok=True)
    write_store(task.corpus_store, root / "corpus")
    write_store(task.prompt_store, root / "prompts")
    write_store(task.test_store, root / "test")
    write_store(task.train_store, root / "train")
    verbalizer = {
        "task_kind": task.spec.task_kind,
        "templates": task.spec.templates,
        "labels": [
            {"class_index": l.class_index, "name": l.name, "synonyms": l.synonyms}
            for l in task.spec.labels
        ],
    }
    (root / "verbalizer.json").write_text(json.dumps(verbalizer, indent=2))
    with open(root / "dataset.jsonl", "w") as fh:
        for inst in task.dataset.instances:
            fh.write(json.dumps({"id": inst.id, "text": inst.text, "label": inst.gold}) + "\n")
    with open(root / "train.jsonl", "w") as fh:
        for inst in task.train_dataset.instances:
            fh.write(json.dumps({"id": inst.id, "text": inst.text, "label": inst.gold}) + "\n")
    return {
        "corpus": str(root / "corpus"),
        "prompts": str(root / "prompts"),
        "test": str(root / "test"),
        "train": str(root / "train"),
        "verbalizer": str(root / "verbalizer.json"),
        "dataset": str(root / "dataset.jsonl"),
        "train_dataset": str(root / "train.jsonl"),
    }
