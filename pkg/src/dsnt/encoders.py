"""Token encoders, head projections and Gaussian stochastic encodings."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor, concat, masked_max, matmul, softplus
from .exceptions import ContractError, DimensionError, EmptyInputError

PAD = 0
UNK = 1
RESERVED = ("<pad>", "<unk>")


class Vocabulary:
    """Token to index map with ``0 = <pad>`` and ``1 = <unk>`` reserved."""

    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def encode(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, indices):
        return [self.itos[i] for i in indices]

    @classmethod
    def from_corpus(cls, sequences):
        vocab = cls()
        for seq in sequences:
            for t in seq:
                vocab.add(t)
        return vocab

    def save(self, path):
        # one token per line; line n holds index n + 2
        Path(path).write_text("".join(t + "\n" for t in self.itos[2:]), encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def pad_batch(sequences):
    """Right-pad index sequences into an int matrix and a validity mask.

    Index 0 inside a sequence is treated as padding as well.
    """
    if len(sequences) == 0:
        raise EmptyInputError("empty batch")
    width = max(1, max(len(s) for s in sequences))
    idx = np.zeros((len(sequences), width), dtype=np.int64)
    for row, seq in enumerate(sequences):
        idx[row, : len(seq)] = seq
    mask = idx != PAD
    empty = np.flatnonzero(~mask.any(axis=1))
    if empty.size:
        raise EmptyInputError(f"sequence {int(empty[0])} is empty after padding removal")
    return idx, mask


class EmbeddingTable:
    def __init__(self, vocab_size, dim, rng=None, weight=None):
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weight = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim))
        self.weight = as_tensor(weight)
        self.weight.requires_grad = True
        if self.weight.shape[0] != vocab_size:
            raise DimensionError(f"embedding has {self.weight.shape[0]} rows for a vocabulary of {vocab_size}")

    @property
    def dim(self):
        return self.weight.shape[1]

    def lookup(self, idx):
        return self.weight[np.asarray(idx)]

    def parameters(self):
        return {"embedding": self.weight}


class DeterministicEncoder:
    """Maps embedded sequences ``[B, L, e]`` to vectors ``[B, d]``.

    ``bow-mlp`` averages the non-padding embeddings and applies a stack of
    dense layers (tanh, last one optionally linear).  ``cnn`` applies a 1-D
    convolution of width ``window`` followed by ReLU and max-over-time pooling.
    """

    KINDS = ("bow-mlp", "cnn")

    def __init__(self, kind, emb_dim, out_dim, rng=None, layers=1, window=3, final_activation="tanh"):
        if kind not in self.KINDS:
            raise ContractError(f"unknown encoder kind {kind!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kind = kind
        self.emb_dim = emb_dim
        self.out_dim = out_dim
        self.window = window
        self.final_activation = final_activation
        self.params = {}
        if kind == "bow-mlp":
            fan_in = emb_dim
            for i in range(layers):
                self.params[f"mlp{i}.W"] = Tensor(glorot(rng, fan_in, out_dim), requires_grad=True)
                self.params[f"mlp{i}.b"] = Tensor(np.zeros(out_dim), requires_grad=True)
                fan_in = out_dim
            self.layers = layers
        else:
            self.params["conv.W"] = Tensor(glorot(rng, window * emb_dim, out_dim), requires_grad=True)
            self.params["conv.b"] = Tensor(np.zeros(out_dim), requires_grad=True)
            self.layers = 1

    def parameters(self):
        return dict(self.params)

    def forward(self, emb, mask):
        if emb.shape[-1] != self.emb_dim:
            raise DimensionError(f"encoder expects width {self.emb_dim}, got {emb.shape}")
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=1)):
            raise EmptyInputError("all-padding input")
        if self.kind == "bow-mlp":
            return self._bow(emb, mask)
        return self._cnn(emb, mask)

    def _bow(self, emb, mask):
        weights = mask / mask.sum(axis=1, keepdims=True)
        h = matmul(Tensor(weights[:, None, :]), emb).reshape(emb.shape[0], self.emb_dim)
        for i in range(self.layers):
            h = h @ self.params[f"mlp{i}.W"] + self.params[f"mlp{i}.b"]
            if i < self.layers - 1 or self.final_activation == "tanh":
                h = h.tanh()
        return h

    def _cnn(self, emb, mask):
        B, L, e = emb.shape
        w = self.window
        if L < w:
            pad = Tensor(np.zeros((B, w - L, e)))
            emb = concat([emb, pad], axis=1)
            mask = np.concatenate([mask, np.zeros((B, w - L), dtype=bool)], axis=1)
            L = w
        emb = emb * Tensor(mask[..., None].astype(np.float64))
        n_win = L - w + 1
        win_idx = np.arange(n_win)[:, None] + np.arange(w)[None, :]
        windows = emb[:, win_idx, :].reshape(B, n_win, w * e)
        h = (windows @ self.params["conv.W"] + self.params["conv.b"]).relu()
        lengths = mask.sum(axis=1)
        starts = np.arange(n_win)[None, :]
        valid = (starts <= np.maximum(lengths - w, 0)[:, None])
        return masked_max(h, valid[..., None], axis=1)


def encode(enc, emb, tokens):
    """Encode one token sequence into a ``[d]`` vector on the tape."""
    idx, mask = pad_batch([list(tokens)])
    return enc.forward(emb.lookup(idx), mask)[0]


def encode_batch(enc, emb, sequences):
    idx, mask = pad_batch(sequences)
    return enc.forward(emb.lookup(idx), mask)


class HeadProjector:
    """``K`` distinct ``d x d`` projections stored as one ``[K, d, d]`` tensor."""

    def __init__(self, k, d, rng=None, weight=None):
        if k < 1:
            raise ContractError("head count must be at least 1")
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weight = rng.normal(0.0, 1.0 / np.sqrt(d), size=(k, d, d))
        self.weight = as_tensor(weight)
        self.weight.requires_grad = True
        if self.weight.shape != (k, d, d):
            raise DimensionError(f"head weights must be {(k, d, d)}, got {self.weight.shape}")
        self.k, self.d = k, d

    def parameters(self):
        return {"heads.W": self.weight}


def project_heads_stacked(hp, z):
    """``z [..., d] -> [..., K, d]`` with row ``i`` equal to ``W_i z``."""
    z = as_tensor(z)
    if z.shape[-1] != hp.d:
        raise DimensionError(f"projector width {hp.d} does not match z of shape {z.shape}")
    lead = z.shape[:-1]
    zr = z.reshape(lead + (1, 1, hp.d))
    out = matmul(zr, hp.weight.transpose())
    return out.reshape(lead + (hp.k, hp.d))


def project_heads(hp, z):
    stacked = project_heads_stacked(hp, z)
    return [stacked[..., i, :] for i in range(hp.k)]


@dataclass
class GaussianPosterior:
    """Per-input Gaussian encoding.

    In diagonal mode ``scale`` is the standard deviation per coordinate.  In
    joint mode ``joint_factor`` is the lower-triangular Cholesky factor of the
    covariance and ``scale`` holds its diagonal.
    """

    mean: Tensor
    scale: Tensor
    joint_factor: Tensor = None
    head_partition: list = None

    def __post_init__(self):
        if np.any(self.scale.data <= 0):
            raise ContractError("posterior scale must be strictly positive")
        D = self.mean.shape[-1]
        if self.scale.shape != self.mean.shape:
            raise DimensionError(f"mean {self.mean.shape} and scale {self.scale.shape} differ")
        if self.joint_factor is not None:
            L = self.joint_factor.data
            if L.shape[-2:] != (D, D):
                raise DimensionError(f"joint factor must be {D}x{D}, got {L.shape}")
            if np.any(np.triu(L, 1) != 0):
                raise ContractError("joint factor must be lower triangular")
            if np.any(np.diagonal(L, axis1=-2, axis2=-1) <= 0):
                raise ContractError("joint factor diagonal must be positive")
        if self.head_partition is not None:
            check_partition(self.head_partition, D)

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def is_joint(self):
        return self.joint_factor is not None


def check_partition(partition, D):
    pos = 0
    for start, stop in partition:
        if start != pos or stop <= start:
            raise ContractError(f"head partition {partition} must be contiguous and cover 0..{D}")
        pos = stop
    if pos != D:
        raise ContractError(f"head partition {partition} must cover exactly {D} coordinates")


def even_partition(D, k):
    if D % k:
        raise ContractError(f"D={D} is not divisible by K={k}")
    w = D // k
    return [(i * w, (i + 1) * w) for i in range(k)]


class StochasticLayer:
    """Dense layer emitting Gaussian parameters from a ``d``-wide encoding.

    Diagonal mode emits ``2D`` outputs: mean, then softplus-mapped scale.
    Joint mode also emits the ``D(D-1)/2`` strictly-lower entries of the
    Cholesky factor; its diagonal is the softplus-mapped scale block.
    """

    def __init__(self, in_dim, D, joint=False, partition=None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.D, self.joint = in_dim, D, joint
        self.partition = partition
        n_low = D * (D - 1) // 2 if joint else 0
        self.n_out = 2 * D + n_low
        self.params = {
            "stoch.W": Tensor(glorot(rng, in_dim, self.n_out), requires_grad=True),
            "stoch.b": Tensor(np.zeros(self.n_out), requires_grad=True),
        }
        if joint:
            rows, cols = np.tril_indices(D, -1)
            place = np.zeros((D + n_low, D * D))
            place[np.arange(D), np.arange(D) * (D + 1)] = 1.0
            place[D + np.arange(n_low), rows * D + cols] = 1.0
            self._place = place

    def parameters(self):
        return dict(self.params)

    def forward(self, h):
        D = self.D
        out = h @ self.params["stoch.W"] + self.params["stoch.b"]
        mean = out[..., :D]
        scale = softplus(out[..., D : 2 * D])
        if not self.joint:
            return GaussianPosterior(mean, scale)
        lead = out.shape[:-1]
        raw = concat([scale, out[..., 2 * D :]], axis=-1) if D > 1 else scale
        L = matmul(raw, Tensor(self._place)).reshape(lead + (D, D))
        return GaussianPosterior(mean, scale, L, self.partition)


def encode_gaussian(enc, emb, layer, tokens):
    """Gaussian posterior for one token sequence (leading axis squeezed)."""
    idx, mask = pad_batch([list(tokens)])
    post = layer.forward(enc.forward(emb.lookup(idx), mask))
    return GaussianPosterior(
        post.mean[0],
        post.scale[0],
        None if post.joint_factor is None else post.joint_factor[0],
        post.head_partition,
    )


def sample(post, eps):
    """Reparameterised draw: ``mu + eps * sigma`` or ``mu + L eps``."""
    eps = as_tensor(eps)
    if eps.shape[-1] != post.dim:
        raise DimensionError(f"noise width {eps.shape[-1]} does not match posterior width {post.dim}")
    if post.is_joint:
        return post.mean + matmul(post.joint_factor, eps.reshape(eps.shape + (1,))).reshape(eps.shape)
    return post.mean + eps * post.scale
