"""First-derivative saliency of each head with respect to input embeddings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor, backward
from .encoders import pad_batch
from .exceptions import ContractError, EmptyInputError


@dataclass
class SaliencyMap:
    scores: np.ndarray  # [K, L], non-negative
    tokens: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[1] != len(self.tokens):
            raise ContractError(f"scores {self.scores.shape} do not match {len(self.tokens)} tokens")
        if np.any(self.scores < 0):
            raise ContractError("saliency scores must be non-negative")

    @property
    def n_heads(self):
        return self.scores.shape[0]

    def normalized(self):
        top = self.scores.max(axis=1, keepdims=True)
        return np.divide(self.scores, top, out=np.zeros_like(self.scores), where=top > 0)


def head_saliency(model, tokens, token_strings=None):
    """``S_i(e_p) = sum_j sum_c |d z_i^j / d e_p[c]|`` for every head and position.

    ``model`` must provide ``embed(sequences) -> (emb, mask)`` and
    ``heads_from_embedded(emb, mask) -> [1, K, w]``.  The derivative is taken
    at the actual embeddings with every other token held fixed; one backward
    pass per head coordinate.
    """
    tokens = list(tokens)
    if not tokens:
        raise EmptyInputError("empty input")
    pad_batch([tokens])
    emb, mask = model.embed([tokens])
    leaf = Tensor(emb.data, requires_grad=True)
    H = model.heads_from_embedded(leaf, mask)
    K, width = H.shape[-2], H.shape[-1]
    scores = np.zeros((K, len(tokens)))
    for i in range(K):
        for j in range(width):
            leaf.grad = None
            backward(H[0, i, j])
            if leaf.grad is not None:
                scores[i] += np.abs(leaf.grad[0]).sum(axis=-1)
    if token_strings is None:
        vocab = getattr(model, "vocab", None)
        token_strings = vocab.decode(tokens) if vocab is not None else [str(t) for t in tokens]
    return SaliencyMap(scores, list(token_strings))


def export_heatmap(smap, path):
    """Write heatmap JSON: tokens, max-normalised head rows and raw scores."""
    doc = {
        "tokens": list(smap.tokens),
        "heads": smap.normalized().tolist(),
        "raw": smap.scores.tolist(),
        "normalization": "per-head max",
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc


HEATMAP_SCHEMA = {
    "type": "object",
    "required": ["tokens", "heads", "raw", "normalization"],
    "properties": {
        "tokens": {"type": "array", "items": {"type": "string"}},
        "heads": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}},
        "raw": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
        "normalization": {"const": "per-head max"},
    },
}


def load_heatmap(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SaliencyMap(np.array(doc["raw"], dtype=np.float64).reshape(len(doc["raw"]), len(doc["tokens"])), doc["tokens"])


def head_divergence(smap):
    """Mean over head pairs of ``1 - cos`` between positional saliency profiles."""
    S = smap.scores
    K = S.shape[0]
    if K < 2:
        raise ContractError("head divergence needs at least two heads")
    norms = np.linalg.norm(S, axis=1)
    vals = []
    for i in range(K):
        for j in range(i + 1, K):
            if norms[i] == 0 and norms[j] == 0:
                cos = 1.0
            elif norms[i] == 0 or norms[j] == 0:
                cos = 0.0
            else:
                cos = float(S[i] @ S[j] / (norms[i] * norms[j]))
            vals.append(1.0 - cos)
    return float(np.mean(vals))
