"""Mini-batch training, hyperparameter sweeps and checkpoints."""

from __future__ import annotations

import json
import logging
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autograd import backward, no_grad, zero_grad
from .config import TrainConfig
from .encoders import Vocabulary
from .exceptions import DimensionError, NonFiniteError, PersistenceError, TrainingError
from .model import Model

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class Adam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.98), eps=1e-6):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def code_version():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class ExperimentRecord:
    config: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    accuracies: dict = field(default_factory=dict)
    robustness: dict = None
    decoding: str = "mean"
    wall_clock: float = 0.0
    code_version: str = ""
    error: str = None

    @property
    def seed(self):
        return self.config["seed"]

    def to_dict(self):
        return asdict(self)

    def to_json(self, timestamps=True):
        d = self.to_dict()
        if not timestamps:
            d.pop("wall_clock")
        return json.dumps(d, sort_keys=True)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def validation_loss(model, X, y, seed):
    """Validation loss breakdown with noise fixed by ``seed`` (same draws every epoch)."""
    with no_grad():
        return model.loss(X, y, rng=np.random.default_rng([seed, 7]))


def accuracy(model, X, y, batch_size=512):
    if len(X) == 0:
        return float("nan")
    preds = []
    for start in range(0, len(X), batch_size):
        preds.append(model.predict(X[start : start + batch_size]))
    return float(np.mean(np.concatenate(preds) == np.asarray(y)))


def train(config, train_set, valid_set, vocab=None, vocab_size=None):
    """Train one model; returns ``(best-validation model, ExperimentRecord)``.

    ``train_set`` and ``valid_set`` are ``(sequences, labels)`` pairs of index
    sequences.  Epoch 0 of the record is the untrained model.  Training stops
    once the validation task loss has not improved for ``patience`` epochs.
    """
    config = config if isinstance(config, TrainConfig) else TrainConfig.from_dict(config)
    X, y = train_set
    Xv, yv = valid_set
    if len(X) == 0 or len(Xv) == 0:
        raise TrainingError("training and validation sets must be non-empty")
    y = np.asarray(y, dtype=np.int64)
    yv = np.asarray(yv, dtype=np.int64)
    if vocab_size is None:
        vocab_size = len(vocab) if vocab is not None else 1 + max(max(s) for s in list(X) + list(Xv))
    started = time.perf_counter()
    model = Model(config, vocab_size, vocab=vocab)
    params = model.parameters()
    opt = Adam(params, config.lr, (config.adam_b1, config.adam_b2), config.adam_eps)
    order_rng = np.random.default_rng([config.seed, 1])
    noise_rng = np.random.default_rng([config.seed, 2])

    v0 = validation_loss(model, Xv, yv, config.seed)
    record = ExperimentRecord(config=config.to_dict(), code_version=code_version())
    record.epochs.append({"epoch": 0, "train": None, "valid": v0.as_dict()})
    best_loss, best_state, bad = v0.task_term, model.state_dict(), 0

    for epoch in range(1, config.max_epochs + 1):
        sums, n_seen = {}, 0
        for b, idx in enumerate(_batches(len(X), config.batch_size, order_rng)):
            zero_grad(params)
            try:
                lb = model.loss([X[i] for i in idx], y[idx], rng=noise_rng)
                backward(lb.loss)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
            if not np.isfinite(lb.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            opt.step()
            for k, v in lb.as_dict().items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
            n_seen += len(idx)
        try:
            vl = validation_loss(model, Xv, yv, config.seed)
        except NonFiniteError as exc:
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", epoch, None) from exc
        record.epochs.append({"epoch": epoch, "train": {k: v / n_seen for k, v in sums.items()}, "valid": vl.as_dict()})
        if vl.task_term < best_loss:
            best_loss, best_state, bad = vl.task_term, model.state_dict(), 0
            record.best_epoch = epoch
        else:
            bad += 1
            if bad > config.patience:
                break
    model.load_state_dict(best_state)
    record.decoding = "mean" if config.eval_samples == 0 else f"sampled:{config.eval_samples}"
    record.wall_clock = time.perf_counter() - started
    logger.info("trained %s seed=%d best_epoch=%d", config.family, config.seed, record.best_epoch)
    return model, record


def evaluate(model, record, eval_sets, table=None, attack=None, attack_set="source"):
    """Fill ``record.accuracies`` (and ``robustness``) from named test sets."""
    from .bench.attacks import evaluate_robustness

    for name, (Xe, ye) in eval_sets.items():
        record.accuracies[name] = accuracy(model, Xe, ye)
    if table is not None and attack is not None and attack_set in eval_sets:
        Xa, ya = eval_sets[attack_set]
        rep = evaluate_robustness(model, Xa, ya, table, attack)
        record.robustness = rep
        record.accuracies["clean"] = rep["clean"]
        record.accuracies["attacked"] = rep["under_attack"]
    return record


# ---------------------------------------------------------------------------
# sweeps


def _sweep_cell(args):
    config, train_set, valid_set, vocab_size, eval_sets, table, attack = args
    try:
        model, record = train(config, train_set, valid_set, vocab_size=vocab_size)
        evaluate(model, record, eval_sets, table, attack)
    except TrainingError as exc:
        record = ExperimentRecord(config=config.to_dict(), code_version=code_version(), error=str(exc))
    return record


def sweep(template, parameter, grid, seeds, train_set, valid_set, vocab_size, eval_sets=None, table=None, attack=None, jobs=1):
    """Train and evaluate every ``(value, seed)`` cell; one record per cell.

    A failing cell yields a record with ``error`` set instead of aborting.
    """
    if parameter not in ("beta", "lambda_tc"):
        raise ValueError(f"can only sweep beta or lambda_tc, not {parameter!r}")
    if not len(grid) or not len(seeds):
        raise ValueError("grid and seeds must be non-empty")
    cells = [
        (template.replace(**{parameter: float(v), "seed": int(s)}), train_set, valid_set, vocab_size, eval_sets or {}, table, attack)
        for v in grid
        for s in seeds
    ]
    jobs = jobs or os.cpu_count() or 1
    if jobs == 1:
        return [_sweep_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_cell, cells))


# ---------------------------------------------------------------------------
# checkpoints


def _array_json(a):
    return "[" + ",".join(format(float(x), ".17g") for x in a.reshape(-1)) + "]"


def checkpoint_text(model):
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab_size": model.vocab_size,
        "vocabulary": None if model.vocab is None else model.vocab.itos[2:],
    }
    parts = [json.dumps(header, sort_keys=True)[:-1], ', "params": {']
    body = []
    for name, t in model.params.items():
        body.append(f'{json.dumps(name)}: {{"shape": {json.dumps(list(t.shape))}, "values": {_array_json(t.data)}}}')
    parts.append(", ".join(body))
    parts.append("}}\n")
    return "".join(parts)


def save_checkpoint(model, path):
    """Versioned JSON; every value written with 17 significant digits."""
    Path(path).write_text(checkpoint_text(model), encoding="utf-8")


def load_checkpoint(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"cannot read checkpoint {path}: {exc}", field="file") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise PersistenceError(f"unsupported format_version {doc.get('format_version')!r}", field="format_version")
    for key in ("config", "vocab_size", "params"):
        if key not in doc:
            raise PersistenceError(f"checkpoint lacks {key!r}", field=key)
    try:
        config = TrainConfig.from_dict(doc["config"])
    except (TypeError, ValueError) as exc:
        raise PersistenceError(f"invalid config: {exc}", field="config") from exc
    vocab = Vocabulary(doc["vocabulary"]) if doc.get("vocabulary") is not None else None
    model = Model(config, doc["vocab_size"], vocab=vocab)
    state = {}
    for name, entry in doc["params"].items():
        shape = entry.get("shape")
        values = np.asarray(entry.get("values"), dtype=np.float64)
        if not isinstance(shape, list) or int(np.prod(shape)) != values.size:
            raise PersistenceError(f"parameter {name!r}: shape {shape} does not match {values.size} values", field=f"params.{name}.shape")
        state[name] = values.reshape(shape)
    try:
        model.load_state_dict(state)
    except DimensionError as exc:
        raise PersistenceError(str(exc), field="params") from exc
    return model
