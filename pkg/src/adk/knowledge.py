"""Descriptor banks and the two description-derived knowledge representations.

Compositional knowledge is the plain mean of a class's description
embeddings. Instance knowledge re-weights the same embeddings per image with
a softmax over image/description cosine similarity.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_TAU, as_vector, check_tau, ensure_unit_rows, normalize_rows
from .errors import DimensionError, SchemaError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DescriptorBank:
    """N classes x M description embeddings of dimension D.

    ``features`` has shape (N, M, D) and is stored unit-normalized; rows are
    normalized on construction. ``descriptions[n][m]`` is the text behind
    ``features[n, m]``.
    """

    class_names: tuple[str, ...]
    descriptions: tuple[tuple[str, ...], ...]
    features: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        names = tuple(str(c) for c in self.class_names)
        if len(set(names)) != len(names):
            dupes = sorted({c for c in names if names.count(c) > 1})
            raise SchemaError(f"duplicate class names: {dupes}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 3:
            raise DimensionError(f"features must be (N, M, D), got shape {feats.shape}")
        n, m, d = feats.shape
        if n < 1 or m < 1 or d < 1:
            raise SchemaError(f"bank must be non-empty, got shape {feats.shape}")
        if len(names) != n:
            raise SchemaError(f"{len(names)} class names for {n} feature rows")
        descs = tuple(tuple(str(t) for t in row) for row in self.descriptions)
        if len(descs) != n:
            raise SchemaError(f"{len(descs)} description rows for {n} classes")
        ragged = [names[i] for i, row in enumerate(descs) if len(row) != m]
        if ragged:
            raise SchemaError(f"classes without exactly {m} descriptions: {ragged}")
        if not np.all(np.isfinite(feats)):
            raise SchemaError("descriptor features contain NaN or infinity")
        # already-unit rows keep their exact bits, so re-wrapping a bank is idempotent
        unit = ensure_unit_rows(feats.reshape(n * m, d)).reshape(n, m, d)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "descriptions", descs)
        object.__setattr__(self, "features", _frozen(unit))
        object.__setattr__(self, "tau", check_tau(self.tau))

    @property
    def n_classes(self) -> int:
        return self.features.shape[0]

    @property
    def n_descriptions(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def checksum(self) -> str:
        """SHA-256 over class names, texts and little-endian feature bytes (tau excluded)."""
        h = hashlib.sha256()
        h.update(repr(self.features.shape).encode())
        for name, row in zip(self.class_names, self.descriptions):
            h.update(name.encode("utf-8") + b"\x00")
            for text in row:
                h.update(text.encode("utf-8") + b"\x01")
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        return h.hexdigest()

    def with_tau(self, tau: float) -> "DescriptorBank":
        return DescriptorBank(self.class_names, self.descriptions, self.features, tau)

    def restrict(self, class_indices) -> "DescriptorBank":
        idx = list(class_indices)
        return DescriptorBank(
            tuple(self.class_names[i] for i in idx),
            tuple(self.descriptions[i] for i in idx),
            self.features[idx],
            self.tau,
        )


@dataclass(frozen=True, eq=False)
class KnowledgeBank:
    """Inference-ready class vectors: handcrafted prompts and compositional means.

    ``comp`` rows are deliberately left un-normalized; every consumer goes
    through cosine similarity.
    """

    class_names: tuple[str, ...]
    hand: np.ndarray
    comp: np.ndarray
    source_bank_checksum: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        hand = np.asarray(self.hand, dtype=np.float64)
        comp = np.asarray(self.comp, dtype=np.float64)
        names = tuple(self.class_names)
        if hand.ndim != 2 or comp.ndim != 2 or hand.shape != comp.shape:
            raise DimensionError(f"hand {hand.shape} and comp {comp.shape} must both be (N, D)")
        if len(names) != hand.shape[0]:
            raise SchemaError(f"{len(names)} class names for {hand.shape[0]} vectors")
        if len(set(names)) != len(names):
            raise SchemaError("duplicate class names in knowledge bank")
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "hand", _frozen(hand))
        object.__setattr__(self, "comp", _frozen(comp))

    @property
    def n_classes(self) -> int:
        return self.hand.shape[0]

    @property
    def dim(self) -> int:
        return self.hand.shape[1]

    def restrict(self, class_indices) -> "KnowledgeBank":
        idx = list(class_indices)
        return KnowledgeBank(
            tuple(self.class_names[i] for i in idx),
            self.hand[idx],
            self.comp[idx],
            self.source_bank_checksum,
        )


def build_compositional(bank: DescriptorBank) -> np.ndarray:
    """Per-class mean of the description embeddings, shape (N, D).

    Each coordinate is summed with ``math.fsum`` (exactly rounded), so the
    result does not depend on the order of the descriptors.
    """
    n, m, d = bank.features.shape
    cols = np.moveaxis(bank.features, 1, 2).reshape(n * d, m)
    sums = np.fromiter((math.fsum(c) for c in cols), dtype=np.float64, count=n * d)
    return sums.reshape(n, d) / m


def build_knowledge(hand, bank: DescriptorBank) -> KnowledgeBank:
    """Pair handcrafted class vectors with the bank's compositional knowledge."""
    hand = np.asarray(hand, dtype=np.float64)
    if hand.shape != (bank.n_classes, bank.dim):
        raise SchemaError(
            f"hand vectors {hand.shape} do not match bank (N={bank.n_classes}, D={bank.dim})"
        )
    return KnowledgeBank(bank.class_names, hand, build_compositional(bank), bank.checksum)


def _unit_query(v, bank: DescriptorBank) -> np.ndarray:
    v = as_vector(v)
    if v.shape[0] != bank.dim:
        raise DimensionError(f"image dim {v.shape[0]} != bank dim {bank.dim}")
    return normalize_rows(v[None, :])[0]


def attention_map(v, bank: DescriptorBank) -> np.ndarray:
    """Attention weights of image ``v`` over every class's descriptions, shape (N, M).

    Row n is softmax over m of cos(v, t_desc[n, m]) / tau.
    """
    u = _unit_query(v, bank)
    sims = np.clip(bank.features @ u, -1.0, 1.0) / bank.tau
    sims -= sims.max(axis=1, keepdims=True)
    w = np.exp(sims)
    return w / w.sum(axis=1, keepdims=True)


def attention_weights(v, bank: DescriptorBank, class_index: int) -> np.ndarray:
    """Attention weights over the M descriptions of a single class."""
    if not 0 <= class_index < bank.n_classes:
        raise IndexError(f"class index {class_index} out of range [0, {bank.n_classes})")
    u = _unit_query(v, bank)
    s = np.clip(bank.features[class_index] @ u, -1.0, 1.0) / bank.tau
    e = np.exp(s - s.max())
    return e / e.sum()


def build_instance_knowledge(v, bank: DescriptorBank) -> tuple[np.ndarray, np.ndarray]:
    """Image-conditioned class vectors and the attention map that produced them.

    Returns:
        ``(t_inst, weights)`` with shapes (N, D) and (N, M).
    """
    weights = attention_map(v, bank)
    t_inst = np.einsum("nm,nmd->nd", weights, bank.features)
    return t_inst, weights


def subset_descriptions(bank: DescriptorBank, m_keep: int, seed: int | None = None) -> DescriptorBank:
    """Keep ``m_keep`` descriptions per class.

    Without a seed the first ``m_keep`` are kept; with one, each class gets an
    independent uniform sample without replacement (kept in original order).
    """
    m = bank.n_descriptions
    if not 1 <= m_keep <= m:
        raise IndexError(f"m_keep={m_keep} outside [1, {m}]")
    if m_keep == m and seed is None:
        return bank
    if seed is None:
        keep = np.tile(np.arange(m_keep), (bank.n_classes, 1))
    else:
        rng = np.random.default_rng(seed)
        keep = np.stack([np.sort(rng.choice(m, size=m_keep, replace=False)) for _ in range(bank.n_classes)])
    feats = np.stack([bank.features[n, keep[n]] for n in range(bank.n_classes)])
    descs = tuple(tuple(bank.descriptions[n][j] for j in keep[n]) for n in range(bank.n_classes))
    return DescriptorBank(bank.class_names, descs, feats, bank.tau)
