"""Input checks for lists of variable-length sequences."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def check_sequences(X, n_features: int | None = None) -> list[np.ndarray]:
    """Validate a sequence or list of ``T_i x F`` matrices, returning float64 copies."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0:
        raise ValueError("expected at least one sequence")
    out = []
    for i, x in enumerate(X):
        x = check_array(x, dtype=np.float64, ensure_min_samples=1)
        if n_features is not None and x.shape[1] != n_features:
            raise ShapeError(f"sequence {i} has {x.shape[1]} features, expected {n_features}")
        out.append(x)
    return out


def check_label_sequences(y, X: list[np.ndarray], n_speakers: int | None = None) -> list[np.ndarray]:
    """Validate 0/1 label matrices aligned with the feature sequences `X`."""
    if isinstance(y, np.ndarray) and y.ndim == 2:
        y = [y]
    if len(y) != len(X):
        raise ShapeError(f"{len(X)} feature sequences but {len(y)} label sequences")
    out = []
    for i, (labels, x) in enumerate(zip(y, X)):
        labels = check_array(labels, dtype=None, ensure_min_samples=1)
        if labels.shape[0] != x.shape[0]:
            raise ShapeError(f"sequence {i}: {x.shape[0]} frames but {labels.shape[0]} label rows")
        if n_speakers is not None and labels.shape[1] != n_speakers:
            raise ShapeError(f"sequence {i}: {labels.shape[1]} speakers, expected {n_speakers}")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"sequence {i}: labels must be 0/1")
        out.append(labels.astype(np.uint8))
    return out
