"""Dense vector helpers and seeded randomness.

All numerics are double precision throughout the package. Vectors and
matrices are plain numpy arrays; nothing here is clever, it just adds
the strict error handling everything else relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, ZeroVector

# Norms at or below this are treated as zero.
NORM_EPS = 1e-12


def seeded_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic random generator for (seed, stream).

    PCG64 is numpy's documented default bit generator; keying its seed
    sequence on (seed, stream) yields independent reproducible streams
    for one user-facing seed, identical across runs and platforms.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2 as a new array.

    Raises ZeroVector when the norm is not a positive finite number.
    """
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm <= NORM_EPS:
        raise ZeroVector(f"cannot normalize vector with norm {norm!r}")
    return v / norm


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise l2 normalization of a 2-d array."""
    m = np.asarray(m, dtype=float)
    norms = np.linalg.norm(m, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms <= NORM_EPS):
        bad = int(np.argmin(np.where(np.isfinite(norms), norms, -np.inf)))
        raise ZeroVector(f"row {bad} has norm {norms[bad]!r}")
    return m / norms[:, None]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Inner product of two unit vectors, clamped to [-1, 1].

    Callers are expected to pass unit-norm inputs; this only computes the
    dot product (plus a clamp against rounding spill).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape}")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))
