"""File formats and synthetic fixtures.

Feature cache (``.adkf``), all integers little-endian, no padding::

    offset  size  field
    0       4     magic b"ADKF"
    4       4     version (u32, currently 1)
    8       1     dtype (u8: 0 = f32, 1 = f64)
    9       1     kind  (u8: 0 = IMAGE, 1 = HAND, 2 = DESC)
    10      4     dim (u32)
    14      8     record_count (u64)
    22      ...   records
    end-4   4     CRC-32 of every preceding byte (u32)

Each record is ``name_len (u32) | name (UTF-8) | class_index (u32) |
desc_index (u32) | payload (dim x dtype)``; an index of 0xFFFFFFFF means
"absent". For IMAGE records the name is an image id and class_index the
label; HAND records carry the class name; DESC records carry the
description text plus its class and description indices.

Caches round-trip bit-exactly. Unit normalization happens when caches are
turned into banks or image matrices, not in :func:`read_cache`.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import DEFAULT_TAU, ensure_unit_rows, normalize_rows
from .errors import DataError, DomainError, FormatError, SchemaError
from .knowledge import DescriptorBank, KnowledgeBank

MAGIC = b"ADKF"
VERSION = 1
ABSENT = 0xFFFFFFFF
_HEADER = struct.Struct("<4sIBBIQ")
_U32 = struct.Struct("<I")
_IDX = struct.Struct("<II")
KNOWLEDGE_SCHEMA = "adk.knowledge/1"


class Kind(enum.IntEnum):
    IMAGE = 0
    HAND = 1
    DESC = 2


class DType(enum.IntEnum):
    F32 = 0
    F64 = 1

    @property
    def numpy(self) -> str:
        return "<f4" if self is DType.F32 else "<f8"


@dataclass(eq=False)
class FeatureCache:
    """In-memory form of a ``.adkf`` file. ``payload`` is always float64."""

    kind: Kind
    dim: int
    names: list[str] = field(default_factory=list)
    payload: np.ndarray | None = None
    class_indices: list[int | None] | None = None
    desc_indices: list[int | None] | None = None
    dtype: DType = DType.F64

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.dtype = DType(self.dtype)
        n = len(self.names)
        if self.payload is None:
            self.payload = np.zeros((n, self.dim))
        self.payload = np.asarray(self.payload, dtype=np.float64).reshape(n, self.dim)
        if self.class_indices is None:
            self.class_indices = [None] * n
        if self.desc_indices is None:
            self.desc_indices = [None] * n
        if len(self.class_indices) != n or len(self.desc_indices) != n:
            raise SchemaError("index lists must have one entry per record")

    def __len__(self) -> int:
        return len(self.names)

    def labels(self) -> np.ndarray:
        return np.array([-1 if c is None else c for c in self.class_indices], dtype=np.int64)


def encode_cache(cache: FeatureCache) -> bytes:
    if cache.dim < 1:
        raise SchemaError("cache dim must be >= 1")
    if not np.all(np.isfinite(cache.payload)):
        raise DataError("cache payload contains NaN or infinity")
    parts = [_HEADER.pack(MAGIC, VERSION, int(cache.dtype), int(cache.kind), cache.dim, len(cache))]
    rows = cache.payload.astype(cache.dtype.numpy)
    for i, name in enumerate(cache.names):
        raw = str(name).encode("utf-8")
        if not raw:
            raise SchemaError(f"record {i} has an empty name")
        ci, di = cache.class_indices[i], cache.desc_indices[i]
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_IDX.pack(ABSENT if ci is None else int(ci), ABSENT if di is None else int(di)))
        parts.append(rows[i].tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode_cache(data: bytes) -> FeatureCache:
    """Parse ``.adkf`` bytes; every structural problem raises :class:`FormatError`."""
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, dtype, kind, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if dtype not in DType._value2member_map_:
        raise FormatError(f"unknown dtype code {dtype}", 8)
    if kind not in Kind._value2member_map_:
        raise FormatError(f"unknown kind code {kind}", 9)
    if dim < 1:
        raise FormatError("dim must be >= 1", 10)
    dt = DType(dtype)
    row_bytes = dim * (4 if dt is DType.F32 else 8)
    min_record = _U32.size + 1 + _IDX.size + row_bytes
    end = len(data) - _U32.size
    if end < _HEADER.size or count > (end - _HEADER.size) // min_record:
        raise FormatError(f"record_count {count} does not fit in {len(data)} bytes", 14)

    spans = []
    pos = _HEADER.size
    for r in range(count):
        if pos + _U32.size > end:
            raise FormatError(f"truncated record {r} name length", pos)
        (name_len,) = _U32.unpack_from(data, pos)
        if name_len == 0:
            raise FormatError(f"record {r} has an empty name", pos)
        need = _U32.size + name_len + _IDX.size + row_bytes
        if pos + need > end:
            raise FormatError(f"truncated record {r}", pos)
        spans.append(pos)
        pos += need
    if pos != end:
        raise FormatError(f"{end - pos} unexpected trailing bytes", pos)
    (crc,) = _U32.unpack_from(data, end)
    if zlib.crc32(memoryview(data)[:end]) != crc:
        raise FormatError("CRC-32 mismatch", end)

    names, cls, desc = [], [], []
    payload = np.empty((count, dim), dtype=np.float64)
    for r, start in enumerate(spans):
        (name_len,) = _U32.unpack_from(data, start)
        p = start + _U32.size
        try:
            names.append(bytes(data[p:p + name_len]).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"record {r} name is not UTF-8", p) from exc
        p += name_len
        ci, di = _IDX.unpack_from(data, p)
        cls.append(None if ci == ABSENT else ci)
        desc.append(None if di == ABSENT else di)
        p += _IDX.size
        payload[r] = np.frombuffer(data, dtype=dt.numpy, count=dim, offset=p)
    if not np.all(np.isfinite(payload)):
        raise DataError("cache payload contains NaN or infinity")
    return FeatureCache(Kind(kind), dim, names, payload, cls, desc, dt)


def write_cache(cache: FeatureCache, path) -> None:
    Path(path).write_bytes(encode_cache(cache))


def read_cache(path) -> FeatureCache:
    return decode_cache(Path(path).read_bytes())


def cache_digest(cache: FeatureCache) -> str:
    return hashlib.sha256(encode_cache(cache)).hexdigest()


# --- description manifests -------------------------------------------------


@dataclass(frozen=True)
class DescriptionManifest:
    """Class name -> M description strings, in file order."""

    classes: dict[str, tuple[str, ...]]

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(self.classes)

    @property
    def n_descriptions(self) -> int:
        return len(next(iter(self.classes.values())))

    def to_json(self) -> str:
        return json.dumps({k: list(v) for k, v in self.classes.items()}, ensure_ascii=False, indent=2) + "\n"


def _no_duplicate_keys(pairs):
    seen = {}
    dupes = []
    for k, v in pairs:
        if k in seen:
            dupes.append(k)
        seen[k] = v
    if dupes:
        raise SchemaError(f"duplicate class names: {sorted(set(dupes))}")
    return seen


def parse_descriptions(text: str) -> DescriptionManifest:
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"description manifest is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or not raw:
        raise SchemaError("description manifest must be a non-empty JSON object")
    classes = {}
    for name, texts in raw.items():
        if not name:
            raise SchemaError("empty class name")
        if not isinstance(texts, list) or not texts:
            raise SchemaError(f"class {name!r} must map to a non-empty list of strings")
        if not all(isinstance(t, str) and t for t in texts):
            raise SchemaError(f"class {name!r} has an empty or non-string description")
        classes[name] = tuple(texts)
    counts = {name: len(t) for name, t in classes.items()}
    modal = max(set(counts.values()), key=lambda c: (list(counts.values()).count(c), -c))
    ragged = [name for name, c in counts.items() if c != modal]
    if ragged:
        raise SchemaError(f"ragged description counts (expected {modal}): {ragged}")
    return DescriptionManifest(classes)


def load_descriptions(path) -> DescriptionManifest:
    return parse_descriptions(Path(path).read_text(encoding="utf-8"))


def fixture_descriptions() -> DescriptionManifest:
    """The bundled 3-class x 5-description aircraft example."""
    text = resources.files("adk").joinpath("data/aircraft_descriptions.json").read_text(encoding="utf-8")
    return parse_descriptions(text)


# --- caches <-> banks ---------------------------------------------------------


def _expect_kind(cache: FeatureCache, kind: Kind) -> None:
    if cache.kind is not kind:
        raise SchemaError(f"expected a {kind.name} cache, got {cache.kind.name}")


def hand_from_cache(cache: FeatureCache) -> tuple[tuple[str, ...], np.ndarray]:
    """Class names and unit-normalized handcrafted vectors, ordered by class index."""
    _expect_kind(cache, Kind.HAND)
    n = len(cache)
    idx = [i if c is None else c for i, c in enumerate(cache.class_indices)]
    if sorted(idx) != list(range(n)):
        raise SchemaError("HAND cache class indices must be a permutation of 0..N-1")
    order = np.argsort(idx)
    names = tuple(cache.names[i] for i in order)
    if len(set(names)) != n:
        raise SchemaError("HAND cache repeats a class name")
    return names, ensure_unit_rows(cache.payload[order])


def bank_from_cache(cache: FeatureCache, class_names, tau: float = DEFAULT_TAU) -> DescriptorBank:
    """Assemble a rectangular descriptor bank from a DESC cache."""
    _expect_kind(cache, Kind.DESC)
    class_names = tuple(class_names)
    n = len(class_names)
    rows: dict[int, dict[int, int]] = {}
    for r, (ci, di) in enumerate(zip(cache.class_indices, cache.desc_indices)):
        if ci is None or di is None:
            raise SchemaError(f"DESC record {r} lacks a class or description index")
        if ci >= n:
            raise SchemaError(f"DESC record {r} references class {ci}, but only {n} classes exist")
        if di in rows.setdefault(ci, {}):
            raise SchemaError(f"duplicate description {di} for class {class_names[ci]!r}")
        rows[ci][di] = r
    missing = [class_names[i] for i in range(n) if i not in rows]
    if missing:
        raise SchemaError(f"classes without descriptions: {missing}")
    m = len(rows[0])
    ragged = [class_names[i] for i in range(n) if sorted(rows[i]) != list(range(m))]
    if ragged:
        raise SchemaError(f"ragged description sets (expected indices 0..{m - 1}): {ragged}")
    order = np.array([[rows[i][j] for j in range(m)] for i in range(n)])
    feats = ensure_unit_rows(cache.payload[order.ravel()]).reshape(n, m, cache.dim)
    texts = tuple(tuple(cache.names[r] for r in row) for row in order)
    return DescriptorBank(class_names, texts, feats, tau)


def images_from_cache(cache: FeatureCache) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Image ids, unit-normalized features and labels (-1 where absent)."""
    _expect_kind(cache, Kind.IMAGE)
    feats = ensure_unit_rows(cache.payload) if len(cache) else cache.payload
    return list(cache.names), feats, cache.labels()


def bank_to_cache(bank: DescriptorBank, dtype: DType = DType.F64) -> FeatureCache:
    n, m, d = bank.features.shape
    return FeatureCache(
        Kind.DESC, d,
        [t for row in bank.descriptions for t in row],
        bank.features.reshape(n * m, d),
        [i for i in range(n) for _ in range(m)],
        [j for _ in range(n) for j in range(m)],
        dtype,
    )


def hand_to_cache(class_names, hand, dtype: DType = DType.F64) -> FeatureCache:
    hand = np.asarray(hand, dtype=np.float64)
    return FeatureCache(Kind.HAND, hand.shape[1], list(class_names), hand, list(range(len(class_names))), None, dtype)


# --- knowledge bank file ------------------------------------------------------


def knowledge_to_json(kb: KnowledgeBank, **extra) -> str:
    doc = {
        "schema": KNOWLEDGE_SCHEMA,
        "class_names": list(kb.class_names),
        "dim": kb.dim,
        "source_bank_checksum": kb.source_bank_checksum,
        **extra,
        "hand": kb.hand.tolist(),
        "comp": kb.comp.tolist(),
    }
    return json.dumps(doc) + "\n"


def knowledge_from_json(text: str) -> KnowledgeBank:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"knowledge file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != KNOWLEDGE_SCHEMA:
        raise SchemaError("not an ADK knowledge bank file")
    try:
        kb = KnowledgeBank(tuple(doc["class_names"]), doc["hand"], doc["comp"], doc["source_bank_checksum"])
    except KeyError as exc:
        raise SchemaError(f"knowledge file lacks field {exc}") from exc
    extra = {k: v for k, v in doc.items() if k not in {"schema", "class_names", "hand", "comp", "source_bank_checksum"}}
    kb.extra.update(extra)
    return kb


def save_knowledge(kb: KnowledgeBank, path, **extra) -> None:
    Path(path).write_text(knowledge_to_json(kb, **extra), encoding="utf-8")


def load_knowledge(path) -> KnowledgeBank:
    return knowledge_from_json(Path(path).read_text(encoding="utf-8"))


# --- synthetic data -----------------------------------------------------------


@dataclass(eq=False)
class SyntheticDataset:
    bank: DescriptorBank
    hand: np.ndarray
    images: FeatureCache
    prototypes: np.ndarray

    @property
    def class_names(self) -> tuple[str, ...]:
        return self.bank.class_names


def _prototypes(n: int, d: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    # p_k = sqrt(1 - s) * c + sqrt(s) * e_k with orthonormal c, e_k: every pair has cosine 1 - s
    extra = 0 if separation >= 1.0 else 1
    if n + extra > d:
        raise DomainError(f"separation {separation} needs D >= {n + extra} for N={n}, got D={d}")
    basis, _ = np.linalg.qr(rng.normal(size=(d, n + extra)))
    basis = basis.T
    protos = np.sqrt(separation) * basis[:n]
    if extra:
        protos = protos + np.sqrt(1.0 - separation) * basis[n]
    return normalize_rows(protos)


def synthesize_dataset(
    n_classes: int,
    n_descriptions: int,
    dim: int,
    images_per_class: int,
    separation: float,
    noise: float,
    seed: int,
    tau: float = DEFAULT_TAU,
) -> SyntheticDataset:
    """Seeded clustered data: every class has a prototype direction.

    Prototypes have pairwise cosine exactly ``1 - separation``. Descriptors,
    handcrafted vectors and images are the prototype plus isotropic Gaussian
    noise of expected norm ``noise``, renormalized. Images are ordered class
    by class.
    """
    if min(n_classes, n_descriptions, dim, images_per_class) < 1:
        raise DomainError("N, M, D and images_per_class must be positive")
    if not 0.0 <= separation <= 1.0:
        raise DomainError(f"separation must lie in [0, 1], got {separation}")
    if noise < 0:
        raise DomainError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    protos = _prototypes(n_classes, dim, separation, rng)
    scale = noise / np.sqrt(dim)

    def jitter(shape):
        centre = protos.reshape(n_classes, *([1] * len(shape)), dim)
        return normalize_rows((centre + scale * rng.normal(size=(n_classes, *shape, dim))).reshape(-1, dim))

    desc = jitter((n_descriptions,)).reshape(n_classes, n_descriptions, dim)
    hand = jitter(()).reshape(n_classes, dim)
    imgs = jitter((images_per_class,))
    names = tuple(f"class_{i:03d}" for i in range(n_classes))
    texts = tuple(tuple(f"{c} visual attribute {m:02d}" for m in range(n_descriptions)) for c in names)
    bank = DescriptorBank(names, texts, desc, tau)
    labels = [i for i in range(n_classes) for _ in range(images_per_class)]
    image_names = [f"img_{k:06d}" for k in range(len(labels))]
    cache = FeatureCache(Kind.IMAGE, dim, image_names, imgs, labels, None, DType.F64)
    return SyntheticDataset(bank, hand, cache, protos)
