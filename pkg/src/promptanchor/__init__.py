"""Zero-shot text classification against label-prompt anchors.

Inputs, label prompts, and an external corpus are embedded by any
sentence encoder into the portable ``.remb`` store format. Each label is
scored by its prompt's cosine similarity to the input plus the mean
similarity of corpus sentences retrieved with that prompt (and synonym
variants) as queries; the predicted class is the argmax of the sum.
"""

from .errors import (
    AlignmentError,
    FormatError,
    NumericError,
    PromptAnchorError,
    UsageError,
    ValidationError,
)
from .harness import (
    ClosedSetDataset,
    ClosedSetInstance,
    EvalReport,
    FewShotConfig,
    FewShotResult,
    MultipleChoiceDataset,
    MultipleChoiceInstance,
    ablation_run,
    class_prototypes,
    evaluate_closed_set,
    evaluate_multiple_choice,
    linear_probe_baseline,
    load_closed_set,
    load_multiple_choice,
    prototypical_baseline,
    sample_support,
    sensitivity_report,
    softmax_xent_loss_and_grad,
    train_logistic_head,
)
from .index import (
    FlatIndex,
    PartitionedIndex,
    RetrievalResult,
    approx_top_k,
    approx_top_k_batch,
    build_flat_index,
    build_partitioned_index,
    flat_top_k,
    flat_top_k_batch,
    load_index,
    query_top_k,
    save_index,
)
from .scoring import (
    MODE_MULTI,
    MODE_NONE,
    MODE_SINGLE,
    MODES,
    AnchorConfig,
    LabelAnchors,
    LabelAnchorSet,
    LabelDef,
    RetrievedAnchor,
    ScoredPrediction,
    VerbalizerSpec,
    anchors_from_verbalizer,
    build_label_anchors,
    bundled_verbalizer_path,
    classify,
    classify_batch,
    cosine_similarity,
    expand_synonym_prompts,
    load_verbalizer,
    render_prompts,
    score_direct,
    score_retrieval,
)
from .store import (
    EmbeddingRecord,
    EmbeddingStore,
    ValidationIssue,
    ValidationReport,
    normalize_store,
    read_embedding_file,
    store_from_vectors,
    validate_store,
    write_embedding_file,
    write_store,
)

__version__ = "0.1.0"
