"""Desk-scale domain-shift data and word-substitution attacks."""

from .attacks import (
    AttackConfig,
    AttackOutcome,
    evaluate_robustness,
    population_attack,
    run_attack,
    saliency_order_attack,
)
from .data import (
    Example,
    ShiftSpec,
    SynonymTable,
    build_vocabulary,
    generate_shift_dataset,
    read_examples,
    to_arrays,
    token_role,
    write_examples,
)

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "Example",
    "ShiftSpec",
    "SynonymTable",
    "build_vocabulary",
    "evaluate_robustness",
    "generate_shift_dataset",
    "population_attack",
    "read_examples",
    "run_attack",
    "saliency_order_attack",
    "to_arrays",
    "token_role",
    "write_examples",
]
