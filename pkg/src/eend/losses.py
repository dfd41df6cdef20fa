"""Permutation-free training objectives.

All functions take ``T x C`` label matrices (0/1) and ``T x C`` posteriors
in (0, 1). The ``*_node`` variants attach the loss to a gradient tape.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import nn
from .exceptions import ConfigurationError, ShapeError

PROB_CLAMP = 1e-7


def _check_pair(labels, probs):
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.shape != probs.shape:
        raise ShapeError(f"labels {labels.shape} and posteriors {probs.shape} differ in shape")
    return labels, probs


def _elementwise_bce(labels, probs, eps):
    p = np.clip(probs, eps, 1.0 - eps)
    return -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))


def bce(labels, probs, eps: float = PROB_CLAMP) -> float:
    """Binary cross entropy summed over all entries (speakers, and frames if 2-D)."""
    labels, probs = _check_pair(labels, probs)
    return float(np.sum(_elementwise_bce(labels, probs, eps)))


def pit_loss(labels, posteriors, eps: float = PROB_CLAMP) -> tuple[float, tuple[int, ...]]:
    """Mean BCE under the label-column permutation that minimizes it.

    Returns ``(loss, perm)`` where ``labels[:, perm]`` is the best-matching
    reordering of the reference columns. Ties keep the earliest permutation in
    lexicographic order.
    """
    labels, posteriors = _check_pair(labels, posteriors)
    if labels.ndim != 2:
        raise ShapeError(f"expected T x C matrices, got shape {labels.shape}")
    T, C = labels.shape
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(C)):
        cost = np.sum(_elementwise_bce(labels[:, list(perm)], posteriors, eps))
        if best_perm is None or cost < best:
            best, best_perm = cost, perm
    return float(best / (T * C)), best_perm


def fixed_perm_loss(labels, posteriors, eps: float = PROB_CLAMP) -> float:
    """Mean BCE with reference columns taken in their given order."""
    labels, posteriors = _check_pair(labels, posteriors)
    if labels.ndim != 2:
        raise ShapeError(f"expected T x C matrices, got shape {labels.shape}")
    T, C = labels.shape
    return float(np.sum(_elementwise_bce(labels, posteriors, eps)) / (T * C))


def _bce_grad(labels, probs, eps):
    inside = (probs > eps) & (probs < 1.0 - eps)
    p = np.clip(probs, eps, 1.0 - eps)
    return np.where(inside, (p - labels) / (p * (1.0 - p)), 0.0)


def pit_loss_node(labels, z: nn.Node, permutation_free: bool = True,
                  eps: float = PROB_CLAMP) -> tuple[nn.Node, tuple[int, ...]]:
    labels = np.asarray(labels, dtype=np.float64)
    if permutation_free:
        value, perm = pit_loss(labels, z.value, eps)
    else:
        value, perm = fixed_perm_loss(labels, z.value, eps), tuple(range(labels.shape[1]))
    ref = labels[:, list(perm)]
    grad = _bce_grad(ref, z.value, eps) / labels.size
    return nn.scalar_op((z,), value, [grad]), perm


def cluster_labels(labels) -> np.ndarray:
    """One-hot ``T x 2**C`` encoding of each frame's active-speaker subset.

    Class index is ``sum_c labels[t, c] * 2**c``, so 0 is non-speech.
    """
    labels = np.asarray(labels).astype(np.int64)
    T, C = labels.shape
    classes = labels @ (1 << np.arange(C))
    onehot = np.zeros((T, 2 ** C))
    onehot[np.arange(T), classes] = 1.0
    return onehot


def _dpcl_terms(V, L):
    VtV = V.T @ V
    VtL = V.T @ L
    LtL = L.T @ L
    return VtV, VtL, LtL


def dpcl_loss(V, labels) -> float:
    """Squared Frobenius distance between embedding and label affinity matrices.

    Evaluated through ``D x D`` and ``D x 2**C`` Gram products, so the
    ``T x T`` affinities are never formed.
    """
    V = np.asarray(V, dtype=np.float64)
    L = cluster_labels(labels)
    if V.shape[0] != L.shape[0]:
        raise ShapeError(f"embeddings have {V.shape[0]} rows, labels {L.shape[0]}")
    VtV, VtL, LtL = _dpcl_terms(V, L)
    return float(np.sum(VtV * VtV) - 2.0 * np.sum(VtL * VtL) + np.sum(LtL * LtL))


def dpcl_loss_node(V: nn.Node, labels) -> nn.Node:
    L = cluster_labels(labels)
    if V.value.shape[0] != L.shape[0]:
        raise ShapeError(f"embeddings have {V.value.shape[0]} rows, labels {L.shape[0]}")
    Vv = V.value
    VtV, VtL, LtL = _dpcl_terms(Vv, L)
    value = np.sum(VtV * VtV) - 2.0 * np.sum(VtL * VtL) + np.sum(LtL * LtL)
    grad = 4.0 * (Vv @ VtV - L @ VtL.T)
    return nn.scalar_op((V,), value, [grad])


def multi_loss(j_pit, j_dc, alpha: float):
    """Convex combination ``(1 - alpha) * j_pit + alpha * j_dc``; accepts floats or nodes."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(j_pit, nn.Node):
        return nn.combine([(1.0 - alpha, j_pit), (alpha, j_dc)])
    return (1.0 - alpha) * j_pit + alpha * j_dc
