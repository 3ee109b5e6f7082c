"""Per-head class probabilities, the fused decision rule, losses and dL/dv.

Three heads score an image against N class vectors with the same
temperature softmax over cosine similarity:

* ``hand``: handcrafted prompt embeddings,
* ``comp``: compositional knowledge (description means),
* ``inst``: instance knowledge (attention-weighted descriptions).

The description head averages comp and inst; the final score adds the
hand head to it and takes the argmax (ties go to the lowest index).
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import as_vector, check_tau, cosine_matrix, normalize_rows, softmax
from .errors import DimensionError, LossClampWarning, SchemaError
from .knowledge import DescriptorBank, KnowledgeBank

HEADS = ("hand", "comp", "inst")
PROB_FLOOR = 1e-300
CHUNK_ROWS = 128


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    p_hand: np.ndarray
    p_comp: np.ndarray
    p_inst: np.ndarray
    p_desc: np.ndarray
    fused_score: np.ndarray
    predicted: int

    def head(self, name: str) -> np.ndarray:
        return getattr(self, f"p_{name}")

    def to_dict(self) -> dict:
        return {
            "p_hand": self.p_hand.tolist(),
            "p_comp": self.p_comp.tolist(),
            "p_inst": self.p_inst.tolist(),
            "p_desc": self.p_desc.tolist(),
            "fused_score": self.fused_score.tolist(),
            "predicted": self.predicted,
        }


@dataclass(frozen=True)
class LossBreakdown:
    l_hand: float
    l_comp: float
    l_inst: float
    total: float
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class BatchPrediction:
    """Stacked predictions for B images; every array has a leading B axis."""

    p_hand: np.ndarray
    p_comp: np.ndarray
    p_inst: np.ndarray
    attention: np.ndarray
    p_desc: np.ndarray
    fused_score: np.ndarray
    predicted: np.ndarray

    def __len__(self) -> int:
        return self.predicted.shape[0]

    def head_predictions(self, name: str) -> np.ndarray:
        """Argmax labels from a single head ("hand", "comp", "inst", "desc") or "fused"."""
        if name == "fused":
            return self.predicted
        return np.argmax(getattr(self, f"p_{name}"), axis=1)

    def record(self, i: int) -> PredictionRecord:
        return PredictionRecord(
            self.p_hand[i], self.p_comp[i], self.p_inst[i], self.p_desc[i],
            self.fused_score[i], int(self.predicted[i]),
        )


def head_probabilities(v, class_vectors, tau: float) -> np.ndarray:
    """softmax over classes of cos(v, class_vectors[n]) / tau."""
    v = as_vector(v)
    cv = np.atleast_2d(np.asarray(class_vectors, dtype=np.float64))
    if cv.shape[1] != v.shape[0]:
        raise DimensionError(f"image dim {v.shape[0]} != class vector dim {cv.shape[1]}")
    return softmax(cosine_matrix(v, cv)[0], check_tau(tau))


def check_compatible(kb: KnowledgeBank, bank: DescriptorBank) -> None:
    if kb.class_names != bank.class_names:
        raise SchemaError("knowledge bank and descriptor bank disagree on classes or their order")
    if kb.dim != bank.dim:
        raise SchemaError(f"knowledge bank dim {kb.dim} != descriptor bank dim {bank.dim}")


def _predict_chunk(v: np.ndarray, kb: KnowledgeBank, bank: DescriptorBank) -> tuple:
    tau = bank.tau
    u = normalize_rows(v)
    hand_hat = normalize_rows(kb.hand)
    comp_hat = normalize_rows(kb.comp)
    sims = np.clip(np.einsum("bd,nmd->bnm", u, bank.features), -1.0, 1.0) / tau
    sims -= sims.max(axis=2, keepdims=True)
    w = np.exp(sims)
    w /= w.sum(axis=2, keepdims=True)
    t_inst = np.einsum("bnm,nmd->bnd", w, bank.features)
    # one identical (N, D) @ (D,) product per head keeps heads bitwise equal when their vectors are
    cos = np.empty((3, v.shape[0], kb.n_classes))
    for b in range(v.shape[0]):
        cos[0, b] = hand_hat @ u[b]
        cos[1, b] = comp_hat @ u[b]
        cos[2, b] = normalize_rows(t_inst[b]) @ u[b]
    p_hand, p_comp, p_inst = (softmax(np.clip(c, -1.0, 1.0), tau) for c in cos)
    return p_hand, p_comp, p_inst, w


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ADK_THREADS", "1")))
    except ValueError:
        return 1


def fuse(p_hand, p_comp, p_inst) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(p_desc, fused_score, predicted)`` from per-head probabilities.

    Works on (N,) vectors or (B, N) stacks. ``fused_score`` is left as the
    unnormalized sum p_hand + p_desc; argmax ties resolve to the lowest index.
    """
    p_hand, p_comp, p_inst = (np.asarray(p, dtype=np.float64) for p in (p_hand, p_comp, p_inst))
    p_desc = 0.5 * (p_comp + p_inst)
    fused = p_hand + p_desc
    return p_desc, fused, np.argmax(fused, axis=-1)


def classify_batch(images, kb: KnowledgeBank, bank: DescriptorBank, threads: int | None = None) -> BatchPrediction:
    """Classify a (B, D) stack of image features.

    Work is split into fixed 128-row chunks regardless of the thread count, so
    results are bitwise identical for any ``threads`` / ``ADK_THREADS``.
    """
    check_compatible(kb, bank)
    v = np.asarray(images, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != bank.dim:
        raise DimensionError(f"images of shape {v.shape} do not match dim {bank.dim}")
    n = kb.n_classes
    if v.shape[0] == 0:
        empty = np.zeros((0, n))
        return BatchPrediction(empty, empty, empty, np.zeros((0, n, bank.n_descriptions)),
                               empty, empty, np.zeros(0, dtype=np.int64))
    chunks = [v[i:i + CHUNK_ROWS] for i in range(0, v.shape[0], CHUNK_ROWS)]
    workers = threads if threads is not None else _threads()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _predict_chunk(c, kb, bank), chunks))
    else:
        parts = [_predict_chunk(c, kb, bank) for c in chunks]
    p_hand, p_comp, p_inst, w = (np.concatenate(x) for x in zip(*parts))
    p_desc, fused, predicted = fuse(p_hand, p_comp, p_inst)
    return BatchPrediction(p_hand, p_comp, p_inst, w, p_desc, fused, predicted)


def classify(v, kb: KnowledgeBank, bank: DescriptorBank) -> PredictionRecord:
    """Score one image with all three heads and apply the fusion rule."""
    v = as_vector(v)
    return classify_batch(v[None, :], kb, bank, threads=1).record(0)


def _check_subset(class_subset, n: int) -> list[int]:
    subset = [int(i) for i in class_subset]
    if not subset:
        raise SchemaError("class subset is empty")
    if len(set(subset)) != len(subset):
        raise SchemaError(f"class subset has duplicates: {subset}")
    bad = [i for i in subset if not 0 <= i < n]
    if bad:
        raise SchemaError(f"class subset indices out of range: {bad}")
    return subset


def classify_subset(v, kb: KnowledgeBank, bank: DescriptorBank, class_subset) -> PredictionRecord:
    """Classify against ``class_subset`` only; outputs are indexed by subset position."""
    check_compatible(kb, bank)
    subset = _check_subset(class_subset, kb.n_classes)
    return classify(v, kb.restrict(subset), bank.restrict(subset))


def loss(record: PredictionRecord, label: int) -> LossBreakdown:
    """Sum of the per-head negative log-likelihoods at ``label``.

    A probability that underflowed to exactly 0 is clamped to 1e-300; the
    result is flagged ``clamped`` and a :class:`LossClampWarning` is issued.
    """
    n = record.p_hand.shape[0]
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range [0, {n})")
    parts = []
    clamped = False
    for name in HEADS:
        p = float(record.head(name)[label])
        if p < PROB_FLOOR:
            clamped = True
            p = PROB_FLOOR
        parts.append(max(0.0, -np.log(p)))
    if clamped:
        warnings.warn("head probability underflowed at the true label; clamped to 1e-300",
                      LossClampWarning, stacklevel=2)
    return LossBreakdown(parts[0], parts[1], parts[2], parts[0] + parts[1] + parts[2], clamped)


def _cos_grad_wrt_query(u: np.ndarray, vnorm: float, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosines of unit ``u`` with each target row, and d cos / d v per row."""
    t_hat = normalize_rows(targets)
    cos = t_hat @ u
    return cos, (t_hat - cos[:, None] * u[None, :]) / vnorm


def grad_image(v, kb: KnowledgeBank, bank: DescriptorBank, label: int) -> np.ndarray:
    """Exact gradient of the total loss with respect to the image feature ``v``.

    Includes the path through the attention weights of the instance head and
    the normalization of ``v`` inside every cosine.
    """
    check_compatible(kb, bank)
    v = as_vector(v)
    if v.shape[0] != bank.dim:
        raise DimensionError(f"image dim {v.shape[0]} != bank dim {bank.dim}")
    n = kb.n_classes
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range [0, {n})")
    tau = bank.tau
    vnorm = float(np.linalg.norm(v))
    u = v / vnorm
    onehot = np.zeros(n)
    onehot[label] = 1.0
    grad = np.zeros_like(v)

    for targets in (kb.hand, kb.comp):
        cos, dcos = _cos_grad_wrt_query(u, vnorm, targets)
        g = (softmax(cos, tau) - onehot) / tau
        grad += g @ dcos

    # instance head: cos(v, t_inst(v)) depends on v directly and through W(v)
    feats = bank.features
    a = np.clip(feats @ u, -1.0, 1.0)  # (N, M)
    w = softmax(a, tau, axis=1)
    t_inst = np.einsum("nm,nmd->nd", w, feats)
    t_norm = np.linalg.norm(t_inst, axis=1)
    t_hat = t_inst / t_norm[:, None]
    cos = t_hat @ u
    g = (softmax(cos, tau) - onehot) / tau
    grad += g @ ((t_hat - cos[:, None] * u[None, :]) / vnorm)

    q = (u[None, :] - cos[:, None] * t_hat) / t_norm[:, None]  # d cos / d t_inst
    r = np.einsum("nd,nmd->nm", q, feats)
    r_bar = np.sum(w * r, axis=1, keepdims=True)
    coef = g[:, None] * w * (r - r_bar) / tau  # (N, M) weights on d a_nm / d v
    da = (feats - a[:, :, None] * u[None, None, :]) / vnorm
    grad += np.einsum("nm,nmd->d", coef, da)
    return grad
