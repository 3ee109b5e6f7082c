"""Analysis tools: inter-class similarity maps, their KL divergence,
attention inspection and an inference FLOPs model.

KL convention: each row of a similarity map, with its diagonal removed, is
turned into a distribution by a temperature-1 softmax. The divergence is
the mean over rows of KL(text_row || image_row). Absolute values depend on
this convention; only orderings between maps are meaningful.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .core import NORM_EPS, cosine_matrix, log_softmax
from .errors import DegenerateVectorError, InvariantViolation, MissingClassError, SchemaError
from .knowledge import DescriptorBank, attention_weights


class Prototypes(NamedTuple):
    vectors: np.ndarray
    degenerate: np.ndarray  # bool per class, True where the mean has ~zero norm


def class_prototypes(images, labels, n_classes: int | None = None) -> Prototypes:
    """Mean image feature per class (not re-normalized)."""
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise SchemaError(f"images {x.shape} and labels {y.shape} are not aligned")
    c = int(n_classes if n_classes is not None else (y.max() + 1 if y.size else 0))
    counts = np.bincount(y, minlength=c)[:c] if y.size else np.zeros(c, dtype=np.int64)
    missing = np.flatnonzero(counts == 0)
    if c == 0 or missing.size:
        raise MissingClassError(f"classes without samples: {missing.tolist()}")
    sums = np.zeros((c, x.shape[1]))
    np.add.at(sums, y, x)
    protos = sums / counts[:, None]
    return Prototypes(protos, np.linalg.norm(protos, axis=1) <= NORM_EPS)


@dataclass(frozen=True, eq=False)
class SimilarityMap:
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def similarity_map(vectors) -> SimilarityMap:
    """Pairwise cosine similarity among C class-level vectors."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 2:
        raise SchemaError(f"need at least 2 class vectors, got shape {v.shape}")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DegenerateVectorError(f"zero-norm class vectors: {np.flatnonzero(norms <= NORM_EPS).tolist()}")
    s = cosine_matrix(v, v)
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return SimilarityMap(s)


def _offdiag_rows(m: np.ndarray) -> np.ndarray:
    c = m.shape[0]
    mask = ~np.eye(c, dtype=bool)
    return m[mask].reshape(c, c - 1)


def map_kld(text_map: SimilarityMap, image_map: SimilarityMap) -> float:
    """Mean row-wise KL(text || image) over off-diagonal softmax distributions."""
    a, b = np.asarray(text_map.matrix), np.asarray(image_map.matrix)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SchemaError(f"similarity maps of shapes {a.shape} and {b.shape} are not comparable")
    if a.shape[0] < 2:
        raise SchemaError("KL divergence needs at least 2 classes")
    log_p = log_softmax(_offdiag_rows(a), 1.0, axis=1)
    log_q = log_softmax(_offdiag_rows(b), 1.0, axis=1)
    rows = np.sum(np.exp(log_p) * (log_p - log_q), axis=1)
    kld = float(np.mean(np.maximum(rows, 0.0)))
    if not kld >= 0.0:
        raise InvariantViolation(f"negative KL divergence {kld}")
    return kld


@dataclass(frozen=True)
class TopDescriptions:
    items: list[tuple[str, float]]
    other: float

    def to_dict(self) -> dict:
        return {"top": [{"description": t, "weight": w} for t, w in self.items], "other": self.other}


def top_descriptions(v, bank: DescriptorBank, class_index: int, k: int = 4) -> TopDescriptions:
    """The ``k`` highest-weighted descriptions of a class for image ``v``.

    Remaining mass is lumped into ``other``. Equal weights keep description order.
    """
    m = bank.n_descriptions
    if not 1 <= k <= m:
        raise IndexError(f"k={k} outside [1, {m}]")
    w = attention_weights(v, bank, class_index)
    order = np.argsort(-w, kind="stable")[:k]
    items = [(bank.descriptions[class_index][j], float(w[j])) for j in order]
    other = float(np.sum(np.delete(w, order)))
    return TopDescriptions(items, other)


class CountConvention(str, enum.Enum):
    MAC = "MAC"  # one multiply-accumulate = 1 FLOP
    FLOP2 = "FLOP2"  # one multiply-accumulate = 2 FLOPs


class Method(str, enum.Enum):
    CLIP = "CLIP"
    COCOOP = "COCOOP"
    ADK = "ADK"


@dataclass(frozen=True)
class CostModelParams:
    image_encoder_gflops: float
    text_encoder_gflops_per_prompt: float
    D: int
    N: int
    M: int
    count_convention: CountConvention = CountConvention.MAC
    amortize_text: bool = False  # charge N prompt encodings to every image

    def __post_init__(self):
        if self.image_encoder_gflops < 0 or self.text_encoder_gflops_per_prompt < 0:
            raise SchemaError("encoder costs must be nonnegative")
        if self.D < 1 or self.N < 1 or self.M < 0:
            raise SchemaError("D and N must be positive, M nonnegative")
        object.__setattr__(self, "count_convention", CountConvention(self.count_convention))


@dataclass(frozen=True)
class CostBreakdown:
    """Per-image inference GFLOPs; ``lower_order`` is reported but not in ``total``."""

    method: str
    encode: float
    text: float
    knowledge: float
    logits: float
    total: float
    lower_order: float

    def to_dict(self) -> dict:
        return asdict(self)


def inference_cost(params: CostModelParams, method: Method | str) -> CostBreakdown:
    """Per-image inference cost in GFLOPs.

    CLIP: image encoder + N*D logit MACs against cached text features.
    CoCoOp: additionally encodes N image-conditioned prompts per image.
    ADK: CLIP plus N*M*D MACs for description similarities, N*M*D for the
    weighted sums and 2*N*D for the comp/inst logits. Softmax and fusion
    terms (exp, divisions, additions) go to ``lower_order``.
    """
    method = Method(method)
    p = params
    scale = (1.0 if p.count_convention is CountConvention.MAC else 2.0) / 1e9
    encode = p.image_encoder_gflops
    text = p.text_encoder_gflops_per_prompt * p.N if p.amortize_text else 0.0
    logits = p.N * p.D * scale
    knowledge = 0.0
    lower = 2.0 * p.N / 1e9  # exp + divide per class for the hand softmax
    if method is Method.COCOOP:
        text = p.text_encoder_gflops_per_prompt * p.N
    elif method is Method.ADK and p.M > 0:
        knowledge = 2 * p.N * p.M * p.D * scale
        logits += 2 * p.N * p.D * scale
        # attention softmax (exp + divide per description), two more head softmaxes, fusion adds
        lower += (2.0 * p.N * p.M + 4.0 * p.N + 2.0 * p.N) / 1e9
    total = encode + text + knowledge + logits
    return CostBreakdown(method.value, encode, text, knowledge, logits, total, lower)
