"""Auxiliary descriptive knowledge (ADK) for zero-/few-shot classification
over precomputed vision-language features."""

from .classifier import (
    BatchPrediction,
    LossBreakdown,
    PredictionRecord,
    classify,
    classify_batch,
    classify_subset,
    grad_image,
    head_probabilities,
    loss,
)
from .core import DEFAULT_TAU, cosine_similarity, normalize, softmax
from .diagnostics import (
    CostModelParams,
    class_prototypes,
    inference_cost,
    map_kld,
    similarity_map,
    top_descriptions,
)
from .errors import (
    ADKError,
    DataError,
    DegenerateVectorError,
    DimensionError,
    DomainError,
    EmptyInputError,
    FormatError,
    InvariantViolation,
    LossClampWarning,
    MissingClassError,
    SchemaError,
)
from .evaluation import EvalReport, SplitManifest, accuracy, harmonic_mean, kshot_subsample, run_scenario
from .knowledge import (
    DescriptorBank,
    KnowledgeBank,
    attention_map,
    attention_weights,
    build_compositional,
    build_instance_knowledge,
    build_knowledge,
    subset_descriptions,
)

__version__ = "0.1.0"
