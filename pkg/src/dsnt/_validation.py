"""Input checks for ragged token-sequence data."""

from __future__ import annotations

import numbers

import numpy as np


def check_token_sequences(X, allow_strings=True):
    """Return ``X`` as a list of lists; reject empty sequences.

    Accepts sequences of ints (vocabulary indices) or of strings (tokens);
    a plain string is split on whitespace.  Returns ``(sequences, kind)``
    where kind is ``"index"`` or ``"token"``.
    """
    if X is None or isinstance(X, (str, bytes)):
        raise ValueError("expected a collection of token sequences")
    seqs = []
    kind = None
    for i, seq in enumerate(X):
        if isinstance(seq, str):
            seq = seq.split()
        seq = list(seq)
        if not seq:
            raise ValueError(f"sample {i} has no tokens")
        first = seq[0]
        this = "token" if isinstance(first, str) else "index"
        if this == "index" and not all(isinstance(t, numbers.Integral) and t >= 0 for t in seq):
            raise ValueError(f"sample {i} mixes token types or has negative indices")
        if this == "token" and (not allow_strings or not all(isinstance(t, str) for t in seq)):
            raise ValueError(f"sample {i} has non-string tokens")
        if kind is None:
            kind = this
        elif kind != this:
            raise ValueError("mixing string tokens and integer indices across samples")
        seqs.append([int(t) for t in seq] if this == "index" else seq)
    if not seqs:
        raise ValueError("found 0 samples")
    return seqs, kind


def check_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-D, got shape {y.shape}")
    if len(y) != n_samples:
        raise ValueError(f"found {n_samples} samples but {len(y)} labels")
    return y
