"""Balanced soft pseudo-labels by Sinkhorn-Knopp scaling.

The transport plan between N nodes and B prototypes has uniform marginals
(``1/N`` per node, ``1/B`` per prototype). Starting from ``exp(z / eps)``, each
iteration rescales columns and then rows, so the final plan has exact row sums
and approximate column sums that tighten with more iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError


@dataclass(frozen=True)
class SinkhornConfig:
    iterations: int = 5
    epsilon: float = 0.05
    floor: float = 1e-30

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not self.floor > 0:
            raise ParameterError(f"floor must be positive, got {self.floor}")


def sinkhorn_assign(z, cfg: SinkhornConfig = SinkhornConfig()) -> np.ndarray:
    """Return the ``N x B`` plan ``Q`` whose rows sum to ``1/N``.

    ``z`` may be an array or a Variable; only its value is read, so no
    gradient ever flows through the result.
    """
    z = np.array(getattr(z, "value", z), dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ValidationError(f"scores must be a non-empty N x B matrix, got {z.shape}")
    if not np.isfinite(z).all():
        raise ValidationError("scores contain non-finite values")
    n, b = z.shape
    q = np.exp((z - z.max()) / cfg.epsilon)
    for _ in range(cfg.iterations):
        q /= np.maximum(q.sum(axis=0, keepdims=True), cfg.floor) * b
        q /= np.maximum(q.sum(axis=1, keepdims=True), cfg.floor) * n
    return q


def pseudo_labels(q: np.ndarray) -> np.ndarray:
    """Per-node distributions over prototypes (rows of ``N * Q``)."""
    return q * q.shape[0]


def marginal_errors(q: np.ndarray) -> tuple[float, float]:
    """Max deviation of row sums from ``1/N`` and of column sums from ``1/B``."""
    n, b = q.shape
    row_err = float(np.abs(q.sum(axis=1) - 1.0 / n).max())
    col_err = float(np.abs(q.sum(axis=0) - 1.0 / b).max())
    return row_err, col_err
