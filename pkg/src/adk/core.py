"""Vector math kernels used by every other module.

All arithmetic is float64. Inputs of lower precision are promoted on entry.
Functions accept plain array-likes and return numpy arrays; nothing here
mutates its arguments.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVectorError, DimensionError, DomainError, EmptyInputError

NORM_EPS = 1e-12

# Division by tau is applied literally; 0.01 reproduces CLIP's x100 logit scale.
DEFAULT_TAU = 0.01


def as_vector(a, *, normalized: bool = False) -> np.ndarray:
    """Validate ``a`` as a finite 1-D feature vector and return it as float64."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise EmptyInputError("feature vector has dimension 0")
    if not np.all(np.isfinite(arr)):
        raise DomainError("feature vector contains NaN or infinity")
    if normalized and abs(np.linalg.norm(arr) - 1.0) > 1e-6:
        raise DomainError("vector flagged normalized does not have unit norm")
    return arr


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not (tau > 0 and np.isfinite(tau)):
        raise DomainError(f"temperature must be a positive finite number, got {tau}")
    return tau


def normalize(a) -> np.ndarray:
    """Scale ``a`` to unit L2 norm.

    Raises:
        DegenerateVectorError: if the norm is at most 1e-12.
    """
    arr = as_vector(a)
    norm = np.linalg.norm(arr)
    if norm <= NORM_EPS:
        raise DegenerateVectorError(f"cannot normalize vector with norm {norm:.3g}")
    return arr / norm


def normalize_rows(x) -> np.ndarray:
    """Row-wise :func:`normalize` for a 2-D array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise DegenerateVectorError(f"rows {bad.tolist()} have near-zero norm")
    return arr / norms[:, None]


def ensure_unit_rows(x, tol: float = 1e-12) -> np.ndarray:
    """Normalize rows whose norm is off by more than ``tol``; others keep their exact bits."""
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
    off = np.abs(np.linalg.norm(arr, axis=1) - 1.0) > tol
    if off.any():
        arr[off] = normalize_rows(arr[off])
    return arr


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1]."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``a`` (P, D) and ``b`` (Q, D)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return np.clip(normalize_rows(a) @ normalize_rows(b).T, -1.0, 1.0)


def softmax(scores, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    """Temperature softmax ``exp(s/tau) / sum exp(s/tau)`` with max-subtraction."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise EmptyInputError("softmax of an empty score vector")
    if not np.all(np.isfinite(s)):
        raise DomainError("softmax scores must be finite")
    z = s / check_tau(tau)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(scores, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0 or s.shape[axis] == 0:
        raise EmptyInputError("log_softmax of an empty score vector")
    z = s / check_tau(tau)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
