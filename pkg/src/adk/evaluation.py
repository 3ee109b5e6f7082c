"""Accuracy metrics and the all-to-all / base-to-novel / cross-domain harness."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .classifier import BatchPrediction, classify_batch
from .errors import DomainError, MissingClassError, SchemaError
from .knowledge import DescriptorBank, KnowledgeBank

MANIFEST_SCHEMA = "adk.split_manifest/1"
REPORT_SCHEMA = "adk.eval_report/1"
HEAD_NAMES = ("hand", "comp", "inst", "desc", "fused")


class Scenario(str, enum.Enum):
    ALL_TO_ALL = "ALL_TO_ALL"
    BASE_TO_NOVEL = "BASE_TO_NOVEL"
    CROSS_DOMAIN = "CROSS_DOMAIN"


@dataclass(frozen=True)
class SplitManifest:
    scenario: Scenario
    base_classes: tuple[str, ...]
    novel_classes: tuple[str, ...] = ()
    shots_per_class: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "base_classes", tuple(self.base_classes))
        object.__setattr__(self, "novel_classes", tuple(self.novel_classes))
        if not self.base_classes:
            raise SchemaError("manifest lists no base classes")
        for group in (self.base_classes, self.novel_classes):
            if len(set(group)) != len(group):
                raise SchemaError("manifest repeats a class name")
        overlap = set(self.base_classes) & set(self.novel_classes)
        if overlap:
            raise SchemaError(f"base and novel classes overlap: {sorted(overlap)}")
        if self.novel_classes and self.scenario is not Scenario.BASE_TO_NOVEL:
            raise SchemaError("novel classes are only allowed for BASE_TO_NOVEL")
        if self.scenario is Scenario.BASE_TO_NOVEL and not self.novel_classes:
            raise SchemaError("BASE_TO_NOVEL needs at least one novel class")
        if int(self.shots_per_class) < 1:
            raise SchemaError("shots_per_class must be >= 1")

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "scenario": self.scenario.value,
            "base_classes": list(self.base_classes),
            "novel_classes": list(self.novel_classes),
            "shots_per_class": int(self.shots_per_class),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        if d.get("schema", MANIFEST_SCHEMA) != MANIFEST_SCHEMA:
            raise SchemaError(f"unsupported manifest schema {d.get('schema')!r}")
        try:
            return cls(
                Scenario(d["scenario"]),
                tuple(d["base_classes"]),
                tuple(d.get("novel_classes", ())),
                int(d.get("shots_per_class", 16)),
                int(d.get("seed", 0)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"invalid split manifest: {exc}") from exc


@dataclass
class EvalReport:
    scenario: str
    base_acc: float
    novel_acc: float | None = None
    harmonic_mean: float | None = None
    per_class_acc: dict[str, float] = field(default_factory=dict)
    per_head_acc: dict[str, dict[str, float]] = field(default_factory=dict)
    n_images: int = 0
    shots_per_class: int | None = None

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "scenario": self.scenario,
            "base_acc": self.base_acc,
            "novel_acc": self.novel_acc,
            "harmonic_mean": self.harmonic_mean,
            "per_class_acc": dict(self.per_class_acc),
            "per_head_acc": {k: dict(v) for k, v in self.per_head_acc.items()},
            "n_images": self.n_images,
            "shots_per_class": self.shots_per_class,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise SchemaError(f"unsupported report schema {d.get('schema')!r}")
        fields = {k: v for k, v in d.items() if k != "schema"}
        return cls(**fields)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def accuracy(predictions, labels) -> float:
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape or pred.ndim != 1:
        raise SchemaError(f"predictions {pred.shape} and labels {lab.shape} differ in length")
    if pred.size == 0:
        raise SchemaError("accuracy of an empty prediction set")
    return float(np.mean(pred == lab))


def harmonic_mean(base: float, novel: float) -> float:
    """2ab/(a+b); works on either the [0, 1] or the percentage scale."""
    if not (base > 0 and novel > 0):
        raise DomainError(f"harmonic mean needs positive accuracies, got {base}, {novel}")
    return 2.0 * base * novel / (base + novel)


def kshot_subsample(labels, k: int, seed: int) -> np.ndarray:
    """Pick exactly ``k`` sample indices per class, stratified and seeded.

    Classes are visited in ascending label order; for each, ``k`` of its
    indices are drawn without replacement from one ``default_rng(seed)``
    stream. The returned indices are sorted.
    """
    y = np.asarray(labels)
    if k < 1:
        raise DomainError("k must be >= 1")
    rng = np.random.default_rng(seed)
    chosen = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if idx.size < k:
            raise MissingClassError(f"class {c} has {idx.size} samples, fewer than k={k}")
        chosen.append(rng.choice(idx, size=k, replace=False))
    if not chosen:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen))


def _evaluate_partition(images, labels, kb, bank, class_names, names):
    index = {c: i for i, c in enumerate(class_names)}
    missing = [c for c in names if c not in index]
    if missing:
        raise SchemaError(f"manifest classes not in knowledge bank: {missing}")
    subset = [index[c] for c in names]
    mask = np.isin(labels, subset)
    if not mask.any():
        raise SchemaError(f"no images for classes {list(names)}")
    local = {g: j for j, g in enumerate(subset)}
    y = np.array([local[int(l)] for l in labels[mask]], dtype=np.int64)
    pred: BatchPrediction = classify_batch(images[mask], kb.restrict(subset), bank.restrict(subset))
    per_head = {h: accuracy(pred.head_predictions(h), y) for h in HEAD_NAMES}
    per_class = {}
    for j, name in enumerate(names):
        sel = y == j
        if sel.any():
            per_class[name] = accuracy(pred.predicted[sel], y[sel])
    return per_head, per_class, int(mask.sum())


def run_scenario(manifest: SplitManifest, images, labels, kb: KnowledgeBank, bank: DescriptorBank) -> EvalReport:
    """Evaluate one split.

    ALL_TO_ALL scores images of the base classes against every class in the
    knowledge bank. BASE_TO_NOVEL scores base and novel images each against
    their own partition's classes and adds the harmonic mean. CROSS_DOMAIN
    scores the listed classes against themselves.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 2 or labels.shape != (images.shape[0],):
        raise SchemaError(f"images {images.shape} and labels {labels.shape} are not aligned")
    if images.shape[1] != kb.dim:
        raise SchemaError(f"image dim {images.shape[1]} != knowledge dim {kb.dim}")
    if kb.class_names != bank.class_names:
        raise SchemaError("knowledge bank and descriptor bank disagree on classes")
    names = kb.class_names

    if manifest.scenario is Scenario.ALL_TO_ALL:
        missing = [c for c in manifest.base_classes if c not in names]
        if missing:
            raise SchemaError(f"manifest classes not in knowledge bank: {missing}")
        wanted = [names.index(c) for c in manifest.base_classes]
        mask = np.isin(labels, wanted)
        if not mask.any():
            raise SchemaError("no images for the manifest classes")
        pred = classify_batch(images[mask], kb, bank)
        y = labels[mask]
        per_head = {"base": {h: accuracy(pred.head_predictions(h), y) for h in HEAD_NAMES}}
        per_class = {
            names[c]: accuracy(pred.predicted[y == c], y[y == c]) for c in sorted(set(wanted)) if np.any(y == c)
        }
        return EvalReport(manifest.scenario.value, per_head["base"]["fused"], None, None,
                          per_class, per_head, int(mask.sum()), manifest.shots_per_class)

    base_head, base_class, n_base = _evaluate_partition(images, labels, kb, bank, names, manifest.base_classes)
    if manifest.scenario is Scenario.CROSS_DOMAIN:
        return EvalReport(manifest.scenario.value, base_head["fused"], None, None,
                          base_class, {"base": base_head}, n_base, manifest.shots_per_class)

    novel_head, novel_class, n_novel = _evaluate_partition(images, labels, kb, bank, names, manifest.novel_classes)
    base_acc, novel_acc = base_head["fused"], novel_head["fused"]
    hm = harmonic_mean(base_acc, novel_acc) if base_acc > 0 and novel_acc > 0 else 0.0
    return EvalReport(manifest.scenario.value, base_acc, novel_acc, hm,
                      {**base_class, **novel_class}, {"base": base_head, "novel": novel_head},
                      n_base + n_novel, manifest.shots_per_class)
