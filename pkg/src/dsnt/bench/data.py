"""Synthetic source/target text classification with a spurious feature.

Every example carries one *core* token whose class agrees with the label with
probability ``rho_core`` in both domains, one *spurious* token whose class
agrees with probability ``rho_src`` (source) or ``rho_tgt`` (target), and a
number of neutral filler tokens.  Each underlying word has several surface
forms drawn with geometrically decaying frequency; the other forms of the
same word make up its synonym set, so rare forms get little training signal
(the weakness word-substitution attacks exploit).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..encoders import Vocabulary
from ..exceptions import ContractError, PersistenceError

SOURCE, TARGET = "source", "target"


@dataclass(frozen=True)
class Example:
    tokens: tuple
    label: int
    domain: str = SOURCE

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ContractError("example has no tokens")
        if self.label < 0:
            raise ContractError("negative label")


@dataclass(frozen=True)
class ShiftSpec:
    n_classes: int = 2
    core_per_class: int = 4
    spurious_per_class: int = 2
    filler_words: int = 40
    forms_per_word: int = 3
    form_decay: float = 0.3
    rho_core: float = 0.8
    rho_src: float = 0.95
    rho_tgt: float = 0.05
    length_min: int = 6
    length_max: int = 12
    seed: int = 0

    def __post_init__(self):
        for name in ("rho_core", "rho_src", "rho_tgt", "form_decay"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} must lie in [0, 1]")
        if self.rho_core <= 0.5:
            raise ContractError("rho_core must exceed 0.5")
        if self.n_classes < 2:
            raise ContractError("need at least two classes")
        if min(self.core_per_class, self.spurious_per_class, self.forms_per_word) < 1 or self.filler_words < 0:
            raise ContractError("vocabulary sizes must be positive")
        if not 2 <= self.length_min <= self.length_max:
            raise ContractError("need 2 <= length_min <= length_max")

    def to_dict(self):
        return asdict(self)


def _form(word, r):
    return f"{word}~{r}"


def word_forms(word, spec):
    return [_form(word, r) for r in range(spec.forms_per_word)]


def core_words(spec, c):
    return [f"core{c}_{k}" for k in range(spec.core_per_class)]


def spurious_words(spec, c):
    return [f"spur{c}_{k}" for k in range(spec.spurious_per_class)]


def filler_words(spec):
    return [f"w{k}" for k in range(spec.filler_words)]


def all_words(spec):
    words = []
    for c in range(spec.n_classes):
        words += core_words(spec, c) + spurious_words(spec, c)
    return words + filler_words(spec)


def lexicon(spec):
    """Every surface form the generator can emit, in a fixed order."""
    return [f for w in all_words(spec) for f in word_forms(w, spec)]


def token_role(token):
    """``(role, class)`` of a generated token; class is ``None`` for filler."""
    word = token.split("~", 1)[0]
    for role in ("core", "spur"):
        if word.startswith(role):
            return role, int(word[len(role):].split("_", 1)[0])
    return "filler", None


def build_vocabulary(spec):
    return Vocabulary(lexicon(spec))


def _sample_class(rng, label, rho, n_classes):
    if rng.random() < rho:
        return label
    others = [c for c in range(n_classes) if c != label]
    return others[rng.integers(len(others))]


def _generate(spec, n, rho_spur, domain, rng):
    forms_p = spec.form_decay ** np.arange(spec.forms_per_word)
    forms_p /= forms_p.sum()
    fillers = filler_words(spec)
    labels = np.arange(n) % spec.n_classes
    rng.shuffle(labels)

    def pick(words):
        word = words[rng.integers(len(words))]
        return _form(word, rng.choice(spec.forms_per_word, p=forms_p))

    out = []
    for y in labels:
        y = int(y)
        c_core = _sample_class(rng, y, spec.rho_core, spec.n_classes)
        c_spur = _sample_class(rng, y, rho_spur, spec.n_classes)
        length = int(rng.integers(spec.length_min, spec.length_max + 1))
        toks = [pick(core_words(spec, c_core)), pick(spurious_words(spec, c_spur))]
        if fillers:
            toks += [pick(fillers) for _ in range(length - 2)]
        order = rng.permutation(len(toks))
        out.append(Example(tuple(toks[i] for i in order), y, domain))
    return out


def generate_shift_dataset(spec, n_train, n_test_source, n_test_target):
    """Training set (source), source test set and target test set.

    Each split has its own random stream derived from ``spec.seed``, so the
    size of one split never changes the content of another.
    """
    if min(n_train, n_test_source, n_test_target) < 1:
        raise ContractError("split sizes must be at least 1")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(3)]
    train = _generate(spec, n_train, spec.rho_src, SOURCE, streams[0])
    test_src = _generate(spec, n_test_source, spec.rho_src, SOURCE, streams[1])
    test_tgt = _generate(spec, n_test_target, spec.rho_tgt, TARGET, streams[2])
    return train, test_src, test_tgt


# --------------------------------------------------------------------------
# synonym tables


class SynonymTable:
    """Token index to a tuple of substitute indices (never the token itself)."""

    def __init__(self, mapping=None):
        self.mapping = {}
        for tok, subs in (mapping or {}).items():
            subs = tuple(int(s) for s in subs if int(s) != int(tok))
            if subs:
                self.mapping[int(tok)] = subs

    def get(self, token):
        return self.mapping.get(int(token), ())

    def __len__(self):
        return len(self.mapping)

    def __contains__(self, token):
        return int(token) in self.mapping

    def validate(self, vocab_size):
        for tok, subs in self.mapping.items():
            if tok in subs:
                raise ContractError(f"token {tok} lists itself as a synonym")
            if not 0 <= tok < vocab_size or any(not 0 <= s < vocab_size for s in subs):
                raise ContractError(f"synonym entry for {tok} leaves the vocabulary")
        return self

    @classmethod
    def from_spec(cls, spec, vocab):
        mapping = {}
        for w in all_words(spec):
            forms = [vocab.stoi[f] for f in word_forms(w, spec)]
            for f in forms:
                mapping[f] = [g for g in forms if g != f]
        return cls(mapping)

    def save(self, path, vocab):
        lines = []
        for tok in sorted(self.mapping):
            subs = ",".join(vocab.itos[s] for s in self.mapping[tok])
            lines.append(f"{vocab.itos[tok]}\t{subs}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path, vocab):
        mapping = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                tok, subs = line.split("\t")
            except ValueError:
                raise PersistenceError(f"{path}:{lineno}: expected token<TAB>syn1,syn2,...", field="line") from None
            if tok not in vocab:
                continue
            mapping[vocab.stoi[tok]] = [vocab.stoi[s] for s in subs.split(",") if s and s in vocab]
        return cls(mapping)


# --------------------------------------------------------------------------
# dataset files: label<TAB>domain<TAB>space-separated tokens


def write_examples(path, examples):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(f"{ex.label}\t{ex.domain}\t{' '.join(ex.tokens)}\n")


def read_examples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise PersistenceError(f"{path}:{lineno}: expected label<TAB>domain<TAB>tokens", field="line")
            label, domain, text = parts
            try:
                out.append(Example(tuple(text.split()), int(label), domain))
            except (ValueError, ContractError) as exc:
                raise PersistenceError(f"{path}:{lineno}: {exc}", field="line") from None
    return out


def to_arrays(examples, vocab):
    """Index sequences and labels for a list of examples."""
    X = [vocab.encode(ex.tokens) for ex in examples]
    y = np.array([ex.label for ex in examples], dtype=np.int64)
    return X, y
