"""Per-head logits, attention weights over heads, and prediction."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, as_tensor, matmul, no_grad, softmax, stack
from .encoders import sample
from .exceptions import ContractError, DimensionError

MODES = ("regularizer", "vib", "vib_tc")


def _stacked(zs):
    if isinstance(zs, Tensor):
        return zs
    shapes = {z.shape for z in zs}
    if len(shapes) != 1:
        raise DimensionError(f"head representations differ in shape: {sorted(shapes)}")
    return stack(list(zs), axis=-2)


def head_logits(W, zs):
    """``l_i = W z_i`` for every head; returns ``[..., K, T]``.

    ``W`` is either shared (``[T, d]``) or per head (``[K, T, d]``).
    """
    W = as_tensor(W)
    Z = _stacked(zs)
    d = Z.shape[-1]
    if W.shape[-1] != d:
        raise DimensionError(f"classifier {W.shape} does not accept width {d}")
    if W.ndim == 2:
        return matmul(Z, W.transpose())
    K = Z.shape[-2]
    if W.shape[0] != K:
        raise DimensionError(f"{W.shape[0]} per-head classifiers for {K} heads")
    out = matmul(Z.reshape(Z.shape[:-1] + (1, d)), W.transpose())
    return out.reshape(Z.shape[:-1] + (W.shape[1],))


def attention_weights(w_a, zs):
    """``softmax([z_1 . w_a, ..., z_K . w_a])`` over the head axis."""
    w_a = as_tensor(w_a)
    Z = _stacked(zs)
    if w_a.shape != (Z.shape[-1],):
        raise DimensionError(f"attention vector {w_a.shape} does not match width {Z.shape[-1]}")
    return softmax(matmul(Z, w_a), axis=-1)


def combine(ls, alpha, tol=1e-8):
    """Convex combination ``sum_i alpha_i l_i`` of head logits ``[..., K, T]``."""
    Ls = _stacked(ls)
    alpha = as_tensor(alpha)
    if alpha.shape != Ls.shape[:-1]:
        raise DimensionError(f"weights {alpha.shape} do not match head logits {Ls.shape}")
    if np.any(np.abs(alpha.data.sum(axis=-1) - 1.0) > tol):
        raise ContractError("head weights must sum to 1")
    return (alpha.reshape(alpha.shape + (1,)) * Ls).sum(axis=-2)


def predict(model, tokens, mode=None, eval_samples=0, rng=None):
    """Predicted class and class probabilities for one token sequence.

    ``mode`` defaults to the model's own family.
    """
    probs = predict_proba(model, [tokens], mode=mode, eval_samples=eval_samples, rng=rng)[0]
    return int(np.argmax(probs)), probs


def predict_proba(model, sequences, mode=None, eval_samples=0, rng=None):
    """Class probabilities ``[B, T]`` for a batch of index sequences.

    regularizer: softmax of the attention-combined logit.  vib: softmax of the
    classifier at the posterior mean, or the average predictive over
    ``eval_samples`` draws.  vib_tc: uniform average of the per-head
    predictive distributions (at the head means unless ``eval_samples > 0``).
    """
    mode = mode or model.mode
    if mode not in MODES:
        raise ContractError(f"unknown prediction mode {mode!r}")
    if eval_samples and rng is None:
        rng = np.random.default_rng(model.config.seed)
    with no_grad():
        z = model.represent(sequences)
        if mode == "regularizer":
            return softmax(model.head_set(z)["combined"], axis=-1).data
        post = model.posterior(z)
        if eval_samples > 0:
            eps = rng.standard_normal((eval_samples,) + post.mean.shape)
            zs = sample(post, Tensor(eps))
        else:
            zs = post.mean
        if mode == "vib":
            p = softmax(model.vib_logits(zs), axis=-1).data
        else:
            p = np.mean([softmax(lg, axis=-1).data for lg in model.tc_head_logits(zs)], axis=0)
        return p.mean(axis=0) if eval_samples > 0 else p
