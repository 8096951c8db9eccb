"""Label scoring: prompt similarity plus retrieval-aggregated similarity.

Every candidate label is represented by a set of class anchors: the
embedding of its rendered label prompt, optionally joined by the
embeddings of corpus sentences retrieved with that prompt (and synonym
variants of it) as queries. An input is scored against each label as

    direct     = cosine(input, prompt embedding)
    retrieval  = mean over retrieved anchors of cosine(input, anchor)
                 (0 when nothing was retrieved)

and classified as the argmax of their unweighted sum, lowest class index
winning ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .index import FlatIndex, PartitionedIndex, query_top_k
from .store import EmbeddingStore
from .util import parallel_map

MODE_NONE = "none"
MODE_SINGLE = "single_query"
MODE_MULTI = "multi_synonym"
MODES = (MODE_NONE, MODE_SINGLE, MODE_MULTI)

TASK_CLOSED_SET = "closed_set"
TASK_MULTIPLE_CHOICE = "multiple_choice"

PLACEHOLDER = "{label}"

#: Two totals within this distance of the maximum count as tied.
TIE_EPS = 1e-12


@dataclass
class LabelDef:
    class_index: int
    name: str
    synonyms: list[str] = field(default_factory=list)


@dataclass
class VerbalizerSpec:
    """Templates with a ``{label}`` slot plus the label vocabulary."""

    task_kind: str
    templates: list[str]
    labels: list[LabelDef]

    def __post_init__(self) -> None:
        if self.task_kind not in (TASK_CLOSED_SET, TASK_MULTIPLE_CHOICE):
            raise ValidationError(f"unknown task_kind {self.task_kind!r}")
        for t in self.templates:
            if t.count(PLACEHOLDER) != 1:
                raise ValidationError(
                    f"template {t!r} must contain {PLACEHOLDER} exactly once"
                )
        self.labels = sorted(self.labels, key=lambda l: l.class_index)
        indices = [l.class_index for l in self.labels]
        if indices != list(range(len(self.labels))):
            raise ValidationError(f"class indices must be 0..m-1 without gaps, got {indices}")
        for lab in self.labels:
            if not lab.name:
                raise ValidationError(f"label {lab.class_index} has an empty name")

    @property
    def num_labels(self) -> int:
        return len(self.labels)


def load_verbalizer(path: str | Path) -> VerbalizerSpec:
    """Parse a verbalizer JSON file.

    Expected keys: ``task_kind``, ``templates`` (strings containing the
    ``{label}`` slot), ``labels`` (objects with ``class_index``, ``name``
    and optionally ``synonyms``).
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return verbalizer_from_dict(doc, source=str(path))


def verbalizer_from_dict(doc: dict, source: str = "<dict>") -> VerbalizerSpec:
    if not isinstance(doc, dict):
        raise FormatError(f"{source}: verbalizer document must be a JSON object")
    for key in ("task_kind", "templates", "labels"):
        if key not in doc:
            raise FormatError(f"{source}: missing key {key!r}")
    labels = []
    for i, obj in enumerate(doc["labels"]):
        if not isinstance(obj, dict) or "class_index" not in obj or "name" not in obj:
            raise FormatError(f"{source}: labels[{i}] needs class_index and name")
        labels.append(
            LabelDef(
                class_index=int(obj["class_index"]),
                name=str(obj["name"]),
                synonyms=[str(s) for s in obj.get("synonyms", [])],
            )
        )
    return VerbalizerSpec(
        task_kind=str(doc["task_kind"]),
        templates=[str(t) for t in doc["templates"]],
        labels=labels,
    )


def bundled_verbalizer_path(name: str) -> Path:
    """Path of a verbalizer JSON file shipped with the package."""
    root = resources.files("promptanchor") / "verbalizers"
    path = Path(str(root / f"{name}.json"))
    if not path.exists():
        available = sorted(p.stem for p in Path(str(root)).glob("*.json"))
        raise ValidationError(f"no bundled verbalizer {name!r}; available: {available}")
    return path


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, in double precision."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.shape != bv.shape:
        raise ValidationError(f"dim mismatch: {av.shape[0]} vs {bv.shape[0]}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na < 1e-12 or nb < 1e-12:
        raise ValidationError("cosine similarity of a zero vector is undefined")
    return float(np.clip(av @ bv / (na * nb), -1.0, 1.0))


def _get_template(spec: VerbalizerSpec, template_index: int) -> str:
    if not 0 <= template_index < len(spec.templates):
        raise ValidationError(
            f"template_index {template_index} outside [0, {len(spec.templates)})"
        )
    return spec.templates[template_index]


def render_prompts(spec: VerbalizerSpec, template_index: int) -> list[tuple[int, str]]:
    """One (class_index, prompt) per label, in class-index order."""
    template = _get_template(spec, template_index)
    return [(lab.class_index, template.replace(PLACEHOLDER, lab.name)) for lab in spec.labels]


def expand_synonym_prompts(
    spec: VerbalizerSpec, template_index: int, class_index: int, n: int
) -> list[str]:
    """The label's prompt followed by n-1 synonym-substituted variants.

    The original label name is query 1; synonyms fill the remaining slots
    in their listed order.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    template = _get_template(spec, template_index)
    if not 0 <= class_index < spec.num_labels:
        raise ValidationError(f"class_index {class_index} outside [0, {spec.num_labels})")
    lab = spec.labels[class_index]
    if len(lab.synonyms) < n - 1:
        raise ValidationError(
            f"label {lab.name!r} has {len(lab.synonyms)} synonyms, "
            f"needs {n - 1} for n={n} (short by {n - 1 - len(lab.synonyms)})"
        )
    words = [lab.name] + lab.synonyms[: n - 1]
    prompts = [template.replace(PLACEHOLDER, w) for w in words]
    if len(set(prompts)) != len(prompts):
        raise ValidationError(f"label {lab.name!r}: synonym expansion produced duplicates")
    return prompts


@dataclass
class RetrievedAnchor:
    """One retrieved pseudo-label prompt with its provenance."""

    corpus_row_id: int
    embedding: np.ndarray
    source_query: str


@dataclass
class LabelAnchors:
    class_index: int
    prompt_text: str
    prompt_embedding: np.ndarray
    retrieved: list[RetrievedAnchor] = field(default_factory=list)


@dataclass
class AnchorConfig:
    k: int
    n: int
    mode: str


class LabelAnchorSet:
    """Anchors for every candidate label plus cached scoring matrices."""

    def __init__(self, labels: list[LabelAnchors], config: AnchorConfig):
        if config.mode not in MODES:
            raise ValidationError(f"unknown mode {config.mode!r}")
        self.labels = sorted(labels, key=lambda l: l.class_index)
        self.config = config
        self.dim = int(np.asarray(self.labels[0].prompt_embedding).shape[0]) if labels else 0
        self._prompt_matrix = np.array(
            [np.asarray(l.prompt_embedding, dtype=np.float64) for l in self.labels]
        ).reshape(len(self.labels), self.dim)
        self._prompt_norms = (
            np.linalg.norm(self._prompt_matrix, axis=1) if labels else np.zeros(0)
        )
        self._retrieved_matrices: list[np.ndarray | None] = []
        self._retrieved_norms: list[np.ndarray | None] = []
        for lab in self.labels:
            if lab.retrieved:
                m = np.array(
                    [np.asarray(r.embedding, dtype=np.float64) for r in lab.retrieved]
                )
                self._retrieved_matrices.append(m)
                self._retrieved_norms.append(np.linalg.norm(m, axis=1))
            else:
                self._retrieved_matrices.append(None)
                self._retrieved_norms.append(None)

    @property
    def num_labels(self) -> int:
        return len(self.labels)


@dataclass
class ScoredPrediction:
    """Per-label score breakdown and the resulting decision."""

    direct: np.ndarray
    retrieval: np.ndarray
    total: np.ndarray
    predicted: int
    tie: bool


def build_label_anchors(
    queries_per_label: list[tuple[int, list[tuple[str, np.ndarray]]]],
    corpus_index: FlatIndex | PartitionedIndex | None,
    k: int,
    n: int,
    mode: str,
) -> LabelAnchorSet:
    """Retrieve pseudo-label prompts for each label's query list.

    Args:
        queries_per_label: per label, (class_index, [(query text, unit
            embedding), ...]); the first query is the original prompt.
        corpus_index: search structure over the external corpus; may be
            None only in mode "none".
        k: total retrieved sentences per label.
        n: number of queries per label; each contributes k // n hits.
        mode: "none", "single_query", or "multi_synonym".

    Duplicates retrieved by different queries of one label are kept; the
    aggregation averages over exactly the retrieved list.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == MODE_SINGLE and n != 1:
        raise ValidationError(f"single_query mode requires n=1, got {n}")
    if mode != MODE_NONE:
        if corpus_index is None:
            raise ValidationError(f"mode {mode!r} requires a corpus index")
        if k < 1:
            raise ValidationError(f"k must be >= 1 for retrieval modes, got {k}")
        if n < 1:
            raise ValidationError(f"n must be >= 1, got {n}")
        if k % n != 0:
            raise ValidationError(f"k={k} is not divisible by n={n}")

    labels: list[LabelAnchors] = []
    for class_index, queries in queries_per_label:
        if not queries:
            raise ValidationError(f"label {class_index} has no queries")
        texts = [t for t, _ in queries]
        anchors = LabelAnchors(
            class_index=class_index,
            prompt_text=texts[0],
            prompt_embedding=np.asarray(queries[0][1], dtype=np.float64),
        )
        if mode != MODE_NONE:
            if len(queries) != n:
                raise ValidationError(
                    f"label {class_index} has {len(queries)} queries, expected n={n}"
                )
            per_query = k // n
            matrix = corpus_index._matrix
            for text, vec in queries:
                result = query_top_k(corpus_index, vec, per_query)
                for row_id, _sim in result.hits:
                    anchors.retrieved.append(
                        RetrievedAnchor(
                            corpus_row_id=row_id,
                            embedding=matrix[row_id].copy(),
                            source_query=text,
                        )
                    )
        labels.append(anchors)
    return LabelAnchorSet(labels, AnchorConfig(k=k, n=n, mode=mode))


def anchors_from_verbalizer(
    spec: VerbalizerSpec,
    template_index: int,
    prompt_store: EmbeddingStore,
    corpus_index: FlatIndex | PartitionedIndex | None,
    k: int,
    n: int,
    mode: str,
) -> LabelAnchorSet:
    """Render the template, look up prompt embeddings by text, retrieve.

    The prompt store must be normalized and hold one row whose text equals
    every rendered query prompt; a missing prompt is reported by its text.
    """
    if not prompt_store.normalized:
        raise ValidationError("prompt store must be normalized")
    queries_per_label: list[tuple[int, list[tuple[str, np.ndarray]]]] = []
    for lab in spec.labels:
        if mode == MODE_MULTI:
            texts = expand_synonym_prompts(spec, template_index, lab.class_index, n)
        else:
            template = _get_template(spec, template_index)
            texts = [template.replace(PLACEHOLDER, lab.name)]
        pairs: list[tuple[str, np.ndarray]] = []
        for text in texts:
            row = prompt_store.row_for_text(text)
            if row is None:
                raise ValidationError(f"no prompt embedding for text: {text!r}")
            pairs.append((text, prompt_store.vectors[row].astype(np.float64)))
        queries_per_label.append((lab.class_index, pairs))
    return build_label_anchors(queries_per_label, corpus_index, k, n, mode)


def _check_input(anchors: LabelAnchorSet, input_vector: Sequence[float]) -> np.ndarray:
    x = np.asarray(input_vector, dtype=np.float64).reshape(-1)
    if x.shape[0] != anchors.dim:
        raise ValidationError(f"input has dim {x.shape[0]}, anchors have dim {anchors.dim}")
    return x


def score_direct(input_vector: Sequence[float], anchors: LabelAnchorSet) -> np.ndarray:
    """Cosine of the input against each label's prompt embedding."""
    x = _check_input(anchors, input_vector)
    xn = float(np.linalg.norm(x))
    if xn < 1e-12:
        raise ValidationError("cannot score a zero input vector")
    return np.clip(
        (anchors._prompt_matrix @ x) / (anchors._prompt_norms * xn), -1.0, 1.0
    )


def score_retrieval(input_vector: Sequence[float], anchors: LabelAnchorSet) -> np.ndarray:
    """Mean cosine of the input against each label's retrieved anchors.

    Labels with nothing retrieved score 0 (the empty-sum convention).
    """
    x = _check_input(anchors, input_vector)
    xn = float(np.linalg.norm(x))
    if xn < 1e-12:
        raise ValidationError("cannot score a zero input vector")
    scores = np.zeros(anchors.num_labels, dtype=np.float64)
    for i in range(anchors.num_labels):
        matrix = anchors._retrieved_matrices[i]
        if matrix is None:
            continue
        norms = anchors._retrieved_norms[i]
        sims = np.clip((matrix @ x) / (norms * xn), -1.0, 1.0)
        scores[i] = float(sims.mean())
    return scores


def classify(input_vector: Sequence[float], anchors: LabelAnchorSet) -> ScoredPrediction:
    """Argmax of direct + retrieval scores, lowest index on ties."""
    if anchors.num_labels < 1:
        raise ValidationError("cannot classify with an empty label set")
    direct = score_direct(input_vector, anchors)
    retrieval = score_retrieval(input_vector, anchors)
    total = direct + retrieval
    predicted = int(np.argmax(total))
    tie = int(np.sum(total >= total[predicted] - TIE_EPS)) >= 2
    return ScoredPrediction(
        direct=direct, retrieval=retrieval, total=total, predicted=predicted, tie=tie
    )


def classify_batch(
    inputs: np.ndarray, anchors: LabelAnchorSet, threads: int = 1
) -> list[ScoredPrediction]:
    """Classify each row of ``inputs``; schedule-independent results."""
    rows = np.asarray(inputs, dtype=np.float64)
    return parallel_map(lambda x: classify(x, anchors), list(rows), threads)
