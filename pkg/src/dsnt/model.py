"""The trainable network for every model family."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autograd import Tensor, as_tensor
from .config import TrainConfig
from .encoders import (
    DeterministicEncoder,
    EmbeddingTable,
    HeadProjector,
    StochasticLayer,
    even_partition,
    glorot,
    pad_batch,
    project_heads_stacked,
)
from .exceptions import DimensionError
from .heads import attention_weights, combine, head_logits, predict_proba
from .objectives import l_separate, l_vib, l_vib_tc


class Model:
    """Embedding + deterministic encoder + family-specific top.

    baseline / regularizer: ``K`` projected heads, shared classifier ``W``,
    attention vector ``w_a``.  vib: diagonal Gaussian encoding of width ``D``
    and a softmax classifier.  vib_tc: joint Gaussian of width ``D`` split
    into ``K`` equal slices, each with its own softmax classifier.
    """

    def __init__(self, config, vocab_size, vocab=None):
        config = config if isinstance(config, TrainConfig) else TrainConfig.from_dict(config)
        self.config = config
        self.vocab_size = int(vocab_size)
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        c = config
        self.embedding = EmbeddingTable(vocab_size, c.emb_dim, rng=rng)
        self.encoder = DeterministicEncoder(c.encoder, c.emb_dim, c.d, rng=rng, layers=c.mlp_layers, window=c.cnn_window)
        self.params = OrderedDict(self.embedding.parameters())
        self.params.update(self.encoder.parameters())
        K, T = c.heads, c.T
        if c.family in ("baseline", "regularizer"):
            self.projector = HeadProjector(K, c.d, rng=rng)
            self.params.update(self.projector.parameters())
            if c.per_head_classifier:
                w = np.stack([glorot(rng, c.d, T).T for _ in range(K)])
            else:
                w = glorot(rng, c.d, T).T
            self.params["cls.W"] = Tensor(w, requires_grad=True)
            self.params["attn.w"] = Tensor(rng.normal(0.0, 0.1, size=c.d), requires_grad=True)
        elif c.family == "vib":
            self.stochastic = StochasticLayer(c.d, c.D, joint=False, rng=rng)
            self.params.update(self.stochastic.parameters())
            self.params["cls.W"] = Tensor(glorot(rng, c.D, T), requires_grad=True)
            self.params["cls.b"] = Tensor(np.zeros(T), requires_grad=True)
        else:
            self.partition = even_partition(c.D, c.K)
            self.stochastic = StochasticLayer(c.d, c.D, joint=True, partition=self.partition, rng=rng)
            self.params.update(self.stochastic.parameters())
            w = c.D // c.K
            self.params["head_cls.W"] = Tensor(np.stack([glorot(rng, w, T) for _ in range(c.K)]), requires_grad=True)
            self.params["head_cls.b"] = Tensor(np.zeros((c.K, T)), requires_grad=True)

    @property
    def family(self):
        return self.config.family

    @property
    def mode(self):
        return "regularizer" if self.family in ("baseline", "regularizer") else self.family

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state):
        for name, value in state.items():
            if name not in self.params:
                raise DimensionError(f"unexpected parameter {name!r}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise DimensionError(f"parameter {name!r} has shape {value.shape}, expected {self.params[name].shape}")
            self.params[name].data = value.copy()
        missing = set(self.params) - set(state)
        if missing:
            raise DimensionError(f"missing parameters {sorted(missing)}")

    # forward pieces -------------------------------------------------------
    def embed(self, sequences):
        idx, mask = pad_batch(sequences)
        return self.embedding.lookup(idx), mask

    def represent(self, sequences):
        emb, mask = self.embed(sequences)
        return self.encoder.forward(emb, mask)

    def head_set(self, z):
        zs = project_heads_stacked(self.projector, z)
        logits = head_logits(self.params["cls.W"], zs)
        alpha = attention_weights(self.params["attn.w"], zs)
        return {"zs": zs, "logits": logits, "alpha": alpha, "combined": combine(logits, alpha)}

    def posterior(self, z):
        return self.stochastic.forward(z)

    def vib_logits(self, z):
        return z @ self.params["cls.W"] + self.params["cls.b"]

    def tc_classifiers(self):
        W, b = self.params["head_cls.W"], self.params["head_cls.b"]
        return [(lambda zi, i=i: zi @ W[i] + b[i]) for i in range(self.config.K)]

    def tc_head_logits(self, z):
        z = as_tensor(z)
        return [clf(z[..., s:e]) for clf, (s, e) in zip(self.tc_classifiers(), self.partition)]

    def sub_representations(self, z):
        """Head representations ``[..., K, width]`` used for saliency."""
        if self.mode == "regularizer":
            return project_heads_stacked(self.projector, z)
        post = self.posterior(z)
        if self.family == "vib":
            return post.mean.reshape(post.mean.shape[:-1] + (1, self.config.D))
        k = self.config.K
        return post.mean.reshape(post.mean.shape[:-1] + (k, self.config.D // k))

    def heads_from_embedded(self, emb, mask):
        return self.sub_representations(self.encoder.forward(emb, mask))

    def predict_proba(self, sequences, eval_samples=None, rng=None):
        n = self.config.eval_samples if eval_samples is None else eval_samples
        return predict_proba(self, sequences, eval_samples=n, rng=rng)

    def predict(self, sequences, eval_samples=None, rng=None):
        return self.predict_proba(sequences, eval_samples, rng).argmax(axis=1)

    # objective ----------------------------------------------------------------
    def loss(self, sequences, labels, rng=None, n_samples=None):
        c = self.config
        n = n_samples or c.train_samples
        z = self.represent(sequences)
        labels = np.asarray(labels, dtype=np.int64)
        if self.mode == "regularizer":
            hs = self.head_set(z)
            return l_separate(hs["combined"], labels, hs["zs"], c.effective_beta)
        post = self.posterior(z)
        if self.family == "vib":
            return l_vib(post, self.vib_logits, labels, c.beta, n_samples=n, rng=rng)
        return l_vib_tc(
            post, self.tc_classifiers(), labels, c.beta, c.lambda_tc, n_samples=n, rng=rng, average_heads=c.average_heads
        )
