"""The three student-loss terms and the covariance algebra behind alignment.

domain_covariance materializes the (d x d) matrix
    C = (V^T V - (1/n)(1^T V)^T (1^T V)) / n
(1/n normalization, column means subtracted). coral_align needs only squared
Frobenius norms of covariance differences, which expand into Gram matrices of
the centered rows:
    ||C_v - C_u||_F^2 = ||Z_v Z_v^T||_F^2 / n_v^2
                      - 2 ||Z_v Z_u^T||_F^2 / (n_v n_u)
                      + ||Z_u Z_u^T||_F^2 / n_u^2
with Z the column-centered feature matrix. The Gram route costs O(n^2 d)
instead of O(n d^2), which matters because d is large and per-domain batch
slices are small; tests pin it against the materialized double-loop form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffengine as de
from .diffengine import Tensor
from .errors import (
    InsufficientDomainsError,
    InsufficientSamplesError,
    InvalidInputError,
    NumericError,
)

__all__ = [
    "LossWeights",
    "cross_entropy",
    "mse_distill",
    "domain_covariance",
    "coral_align",
    "total_student_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """Tradeoff weights: gamma1 on distillation, gamma2 on alignment."""

    gamma1: float = 0.0
    gamma2: float = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {v}")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    return de.softmax_cross_entropy(logits, labels)


def mse_distill(student_feats, teacher_feats) -> Tensor:
    """Mean squared feature difference; gradient reaches the student side only."""
    student = de.as_tensor(student_feats)
    teacher = de.as_tensor(teacher_feats).detach()
    if student.data.shape != teacher.data.shape:
        raise InvalidInputError(
            f"feature shapes differ: {student.data.shape} vs {teacher.data.shape}"
        )
    return de.mse(student, teacher)


def domain_covariance(v, n_rows: int | None = None) -> Tensor:
    """Feature covariance of one domain, (1/n)-normalized, as a graph node."""
    v = de.as_tensor(v)
    if v.data.ndim != 2:
        raise InvalidInputError(f"feature matrix must be 2-D, got {v.data.shape}")
    n = v.data.shape[0] if n_rows is None else n_rows
    if n != v.data.shape[0]:
        raise InvalidInputError(f"n_rows {n} != actual rows {v.data.shape[0]}")
    if n < 2:
        raise InsufficientSamplesError(f"covariance needs >= 2 rows, got {n}")
    vtv = de.matmul(v, v, transpose_a=True)
    ones = Tensor(np.ones((1, n)))
    col_sums = de.matmul(ones, v)
    outer = de.matmul(col_sums, col_sums, transpose_a=True)
    return de.scale(de.subtract(vtv, de.scale(outer, 1.0 / n)), 1.0 / n)


def coral_align(feature_sets) -> Tensor:
    """Pairwise covariance alignment over >= 2 per-domain feature matrices.

    (2 / (N(N-1))) * sum over unordered pairs of ||C_v - C_u||_F^2 / (4 d^2),
    so two domains give exactly ||C_1 - C_2||_F^2 / (4 d^2).
    """
    mats = [de.as_tensor(v) for v in feature_sets]
    n_domains = len(mats)
    if n_domains < 2:
        raise InsufficientDomainsError(f"alignment needs >= 2 domains, got {n_domains}")
    dims = {m.data.shape[1] for m in mats}
    if len(dims) != 1:
        raise InvalidInputError(f"feature dimensionalities differ: {sorted(dims)}")
    d = dims.pop()
    counts = [m.data.shape[0] for m in mats]
    for n in counts:
        if n < 2:
            raise InsufficientSamplesError(f"every domain needs >= 2 samples, got {n}")
    centered = [de.center_columns(m) for m in mats]
    self_norms = [
        de.frobenius_sq(de.matmul(z, z, transpose_b=True)) for z in centered
    ]
    total = None
    for i in range(n_domains):
        for j in range(i + 1, n_domains):
            cross = de.frobenius_sq(de.matmul(centered[i], centered[j], transpose_b=True))
            pair = de.add(
                de.add(
                    de.scale(self_norms[i], 1.0 / counts[i] ** 2),
                    de.scale(self_norms[j], 1.0 / counts[j] ** 2),
                ),
                de.scale(cross, -2.0 / (counts[i] * counts[j])),
            )
            total = pair if total is None else de.add(total, pair)
    prefactor = 2.0 / (n_domains * (n_domains - 1)) / (4.0 * d * d)
    return de.scale(total, prefactor)


def total_student_loss(cls, mse, align, weights: LossWeights) -> Tensor:
    """L = L_cls + gamma1 * L_mse + gamma2 * L_align."""
    terms = {"cls": de.as_tensor(cls), "mse": de.as_tensor(mse), "align": de.as_tensor(align)}
    for name, t in terms.items():
        if t.data.size != 1:
            raise InvalidInputError(f"loss term '{name}' must be scalar, got {t.data.shape}")
        if not np.isfinite(t.data):
            raise NumericError(name, f"loss term '{name}' is non-finite")
    return de.add(
        terms["cls"],
        de.add(
            de.scale(terms["mse"], weights.gamma1),
            de.scale(terms["align"], weights.gamma2),
        ),
    )
