"""Alignment, diversity and decorrelation objectives.

Prediction batches are ``(n, d)`` arrays or tensors with one unit-norm
prediction per row (the transpose of the usual column-matrix notation).
Every function accepts either a :class:`~audiossl.tensor.Tensor`, in which
case a differentiable scalar tensor is returned, or a plain array, in which
case a float is returned.

The ``*_bruteforce`` and ``*_reference`` functions are plain numpy loops kept
as independent oracles for the vectorized forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_diversity: float = 1.0
    lambda_decorrelation: float = 1.0

    def __post_init__(self):
        if self.lambda_diversity < 0 or self.lambda_decorrelation < 0:
            raise ContractError(f"loss weights must be non-negative, got {self}")


def _as_graph(x) -> tuple[Tensor, bool]:
    if isinstance(x, Tensor):
        return x, True
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"prediction batch must be (n, d), got shape {arr.shape}")
    return Tensor(arr), False


def _finish(t: Tensor, keep: bool):
    return t if keep else t.item()


def alignment_loss(preds, targets):
    """Mean squared distance between paired rows (value in [0, 4] for unit rows)."""
    p, keep = _as_graph(preds)
    t, _ = _as_graph(targets)
    if p.shape != t.shape:
        raise ContractError(f"alignment_loss: predictions {p.shape} and targets {t.shape} differ")
    diff = p - t
    return _finish(T.scale(T.sum(T.mul(diff, diff)), 1.0 / p.shape[0]), keep)


def diversity_loss_fast(preds):
    """Negative mean pairwise squared distance, in O(n d).

    For unit rows, ``mean_ij |v_i - v_j|^2 = 2 - (2/n^2) |sum_i v_i|^2``;
    this returns the negation, ``(2/n^2) |sum_i v_i|^2 - 2``.
    """
    v, keep = _as_graph(preds)
    n = v.shape[0]
    col = T.reduce_sum_axis(v, 0)
    return _finish(T.add(T.scale(T.sum(T.mul(col, col)), 2.0 / (n * n)), -2.0), keep)


def diversity_loss_bruteforce(preds) -> float:
    """Negative mean over all ordered pairs (i, j), including i == j."""
    v = np.asarray(preds.data if isinstance(preds, Tensor) else preds, dtype=np.float64)
    n = v.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            d = v[i] - v[j]
            total += float(d @ d)
    return -total / (n * n)


def decorrelation_loss(preds):
    """Sum of squared off-diagonal entries of the (n-1)-normalized covariance."""
    v, keep = _as_graph(preds)
    n, d = v.shape
    if n < 2:
        raise ContractError(f"decorrelation_loss needs at least 2 predictions, got {n}")
    ones = Tensor(np.ones((n, 1), dtype=v.dtype))
    mu = T.scale(T.reshape(T.reduce_sum_axis(v, 0), (1, d)), 1.0 / n)
    centered = v - T.matmul(ones, mu)
    cov = T.scale(T.matmul(T.transpose(centered), centered), 1.0 / (n - 1))
    off = Tensor(1.0 - np.eye(d, dtype=v.dtype))
    masked = T.mul(cov, off)
    return _finish(T.sum(T.mul(masked, masked)), keep)


def decorrelation_loss_reference(preds) -> float:
    """Explicit loop over sample outer products and off-diagonal pairs."""
    v = np.asarray(preds.data if isinstance(preds, Tensor) else preds, dtype=np.float64)
    n, d = v.shape
    mu = v.sum(axis=0) / n
    cov = np.zeros((d, d))
    for i in range(n):
        c = v[i] - mu
        cov += np.outer(c, c)
    cov /= n - 1
    total = 0.0
    for a in range(d):
        for b in range(d):
            if a != b:
                total += cov[a, b] ** 2
    return total


def total_loss(align, diversity, decorrelation, weights: LossWeights = LossWeights()):
    """``align + lambda_div * diversity + lambda_dec * decorrelation``."""
    if isinstance(align, Tensor):
        return T.add(
            T.add(align, T.scale(diversity, weights.lambda_diversity)),
            T.scale(decorrelation, weights.lambda_decorrelation),
        )
    return align + weights.lambda_diversity * diversity + weights.lambda_decorrelation * decorrelation
