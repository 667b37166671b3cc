"""Training configuration shared by the trainer, estimator and CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .exceptions import ContractError

FAMILIES = ("baseline", "regularizer", "vib", "vib_tc")

# Adam settings (0.9, 0.98, 1e-6) follow the paper's fully specified optimizer.
@dataclass
class TrainConfig:
    family: str = "regularizer"
    encoder: str = "bow-mlp"
    emb_dim: int = 16
    d: int = 16
    D: int = 8
    K: int = 4
    T: int = 2
    beta: float = 0.0
    lambda_tc: float = 0.0
    lr: float = 0.01
    adam_b1: float = 0.9
    adam_b2: float = 0.98
    adam_eps: float = 1e-6
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 3
    seed: int = 0
    eval_samples: int = 0
    train_samples: int = 1
    mlp_layers: int = 1
    cnn_window: int = 3
    per_head_classifier: bool = False
    average_heads: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.beta < 0:
            raise ContractError("beta must be non-negative")
        if self.lambda_tc < 0:
            raise ContractError("lambda_tc must be non-negative")
        if self.K < 1:
            raise ContractError("K must be at least 1")
        if self.T < 2:
            raise ContractError("T must be at least 2")
        if self.family == "vib_tc" and self.D % self.K:
            raise ContractError(f"D={self.D} must be divisible by K={self.K} for vib_tc")
        for name in ("emb_dim", "d", "D", "batch_size", "max_epochs", "train_samples", "mlp_layers", "cnn_window"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.patience < 0 or self.eval_samples < 0:
            raise ContractError("patience and eval_samples must be non-negative")
        return self

    @property
    def heads(self):
        """Head count actually built; the baseline is the single-head network."""
        return 1 if self.family == "baseline" else self.K

    @property
    def effective_beta(self):
        return 0.0 if self.family == "baseline" else self.beta

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ContractError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**{k: coerce(known[k].type, v) for k, v in data.items()})

    def replace(self, **changes):
        merged = self.to_dict()
        merged.update(changes)
        return TrainConfig.from_dict(merged)


def coerce(type_name, value):
    """Convert strings from config files and flags to the field type."""
    if not isinstance(value, str):
        if type_name == "float" and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    if type_name == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"not a boolean: {value!r}")
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    return value.strip()
