"""Input checks shared by the estimators."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import Corpus, Example, split_text

UNIT_NORM_TOL = 1e-6


def check_token_lists(X, allow_empty: bool = False) -> list[tuple]:
    """Normalize texts / token sequences / a Corpus into a list of token tuples."""
    if isinstance(X, Corpus):
        X = X.examples
    if isinstance(X, (str, Example)):
        X = [X]
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Example):
            toks = tuple(item.tokens)
        elif isinstance(item, str):
            toks = tuple(split_text(item))
        else:
            toks = tuple(str(t) for t in item)
        if not toks and not allow_empty:
            raise ValueError(f"input {i} is empty; non-empty text required")
        out.append(toks)
    if not out:
        raise ValueError("no inputs given")
    return out


def check_X_y(X, y=None):
    if isinstance(X, Corpus) and y is None:
        return check_token_lists(X), list(X.y)
    X = check_token_lists(X)
    if y is None:
        raise ValueError("labels y are required")
    y = [str(v) for v in y]
    if len(y) != len(X):
        raise ValueError(f"X has {len(X)} entries but y has {len(y)}")
    return X, y


def check_unit_norm(v: np.ndarray, what: str = "attribute embedding") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValueError(f"{what} must have unit norm (got norms {np.round(np.ravel(norms)[:4], 6)})")
    return v


def check_label(label: str, known: Sequence[str]) -> int:
    try:
        return list(known).index(label)
    except ValueError:
        raise KeyError(f"unknown label {label!r}; known: {', '.join(known)}") from None
