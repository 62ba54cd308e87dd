"""Two-stage clinical risk prediction: LLM reasoning fused with structured EHR features."""

from ._core import (
    AmbiguousPrediction,
    Error,
    MissingPrediction,
    __version__,
    auprc,
    auroc,
    comorbidity_flags,
    evaluate_scores,
    hash_embed,
    leiden,
    modularity,
    parse_llm_output,
    run_pipeline,
    wbce,
    youden_threshold,
)

__all__ = [
    "AmbiguousPrediction",
    "Error",
    "MissingPrediction",
    "__version__",
    "auprc",
    "auroc",
    "comorbidity_flags",
    "evaluate_scores",
    "hash_embed",
    "leiden",
    "modularity",
    "parse_llm_output",
    "run_pipeline",
    "wbce",
    "youden_threshold",
]
