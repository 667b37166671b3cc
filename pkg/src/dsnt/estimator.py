"""scikit-learn compatible wrappers around the trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_token_sequences
from .autograd import no_grad
from .config import TrainConfig
from .encoders import Vocabulary
from .trainer import train


class TokenIndexer(TransformerMixin, BaseEstimator):
    """Learns a vocabulary from token sequences and maps tokens to indices.

    Index 0 is padding and 1 is the unknown token; unseen tokens map to 1.
    """

    def __init__(self, min_count=1):
        self.min_count = min_count

    def fit(self, X, y=None):
        seqs, kind = check_token_sequences(X)
        if kind != "token":
            raise ValueError("TokenIndexer expects string tokens")
        counts = {}
        for seq in seqs:
            for t in seq:
                counts[t] = counts.get(t, 0) + 1
        self.vocabulary_ = Vocabulary(t for seq in seqs for t in seq if counts[t] >= self.min_count)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        seqs, _ = check_token_sequences(X)
        return [self.vocabulary_.encode(s) for s in seqs]


class DisentangledClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Text classifier trained with one of four criteria.

    Parameters mirror :class:`dsnt.config.TrainConfig`; ``random_state``
    seeds initialisation, shuffling and noise.  ``X`` is a list of token
    sequences, either strings (a vocabulary is learned during ``fit``) or
    non-negative vocabulary indices.  ``transform`` returns the encoder
    representation (posterior mean for the VIB families).

    A fraction ``validation_fraction`` of the training data is held out for
    early stopping.
    """

    def __init__(
        self,
        family="regularizer",
        encoder="bow-mlp",
        emb_dim=16,
        d=16,
        D=8,
        K=4,
        beta=0.0,
        lambda_tc=0.0,
        lr=0.01,
        batch_size=32,
        max_epochs=20,
        patience=3,
        validation_fraction=0.1,
        eval_samples=0,
        train_samples=1,
        mlp_layers=1,
        cnn_window=3,
        per_head_classifier=False,
        average_heads=False,
        random_state=0,
    ):
        self.family = family
        self.encoder = encoder
        self.emb_dim = emb_dim
        self.d = d
        self.D = D
        self.K = K
        self.beta = beta
        self.lambda_tc = lambda_tc
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.eval_samples = eval_samples
        self.train_samples = train_samples
        self.mlp_layers = mlp_layers
        self.cnn_window = cnn_window
        self.per_head_classifier = per_head_classifier
        self.average_heads = average_heads
        self.random_state = random_state

    def _config(self, n_classes):
        params = self.get_params()
        params.pop("validation_fraction")
        params["seed"] = int(params.pop("random_state") or 0)
        return TrainConfig(T=n_classes, **params)

    def _indices(self, X):
        seqs, kind = check_token_sequences(X)
        if kind == "token":
            if self.vocabulary_ is None:
                raise ValueError("model was fitted on indices; pass integer sequences")
            return [self.vocabulary_.encode(s) for s in seqs]
        if max(max(s) for s in seqs) >= self.model_.vocab_size:
            raise ValueError("token index outside the fitted vocabulary")
        return seqs

    def fit(self, X, y):
        seqs, kind = check_token_sequences(X)
        y = check_labels(y, len(seqs))
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if kind == "token":
            self.vocabulary_ = Vocabulary.from_corpus(seqs)
            seqs = [self.vocabulary_.encode(s) for s in seqs]
            vocab_size = len(self.vocabulary_)
        else:
            self.vocabulary_ = None
            vocab_size = max(max(s) for s in seqs) + 1
        config = self._config(len(self.classes_))
        rng = np.random.default_rng([config.seed, 3])
        perm = rng.permutation(len(seqs))
        n_val = max(1, int(round(self.validation_fraction * len(seqs))))
        if n_val >= len(seqs):
            raise ValueError("validation_fraction leaves no training data")
        val, tr = perm[:n_val], perm[n_val:]
        self.model_, self.record_ = train(
            config,
            ([seqs[i] for i in tr], y_enc[tr]),
            ([seqs[i] for i in val], y_enc[val]),
            vocab=self.vocabulary_,
            vocab_size=vocab_size,
        )
        self.n_features_in_ = 1
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(self._indices(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        with no_grad():
            z = self.model_.represent(self._indices(X))
            if self.model_.mode != "regularizer":
                z = self.model_.posterior(z).mean
        return z.data.copy()

    def __sklearn_is_fitted__(self):
        return hasattr(self, "model_")

