"""Command-line entry point: ``dsnt <command> [--config FILE] [--flag value ...]``.

Every option can also be given in a ``key = value`` config file; a flag on
the command line wins over the file, which wins over ``DSNT_SEED`` (seed
only), which wins over the built-in default.  Each run writes
``manifest.json`` next to its outputs.  ``dsnt rerun MANIFEST`` repeats a
run from its manifest.

Exit status: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bench.attacks import AttackConfig, evaluate_robustness
from .bench.data import (
    ShiftSpec,
    SynonymTable,
    build_vocabulary,
    generate_shift_dataset,
    read_examples,
    to_arrays,
    write_examples,
)
from .config import TrainConfig
from .encoders import UNK, Vocabulary
from .exceptions import ContractError, DsntError
from .info import MAX_TABLE, verify_bounds
from .saliency import export_heatmap, head_divergence, head_saliency
from .trainer import checkpoint_text, code_version, evaluate, load_checkpoint, sweep, train

SEED_ENV = "DSNT_SEED"
TABLE4_GRID = "0,0.05,0.10,0.15,0.20,0.25,0.30"


class UsageError(Exception):
    pass


def _opt_int(value):
    if value is None or str(value).strip().lower() in ("", "none", "auto"):
        return None
    return int(value)


def _bool(value):
    if isinstance(value, bool):
        return value
    low = str(value).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _str(value):
    return None if value is None else str(value)


# (name, converter, default, help); a default of ... marks a required option
_SHIFT = [
    ("n_train", int, 2000, "training examples (source domain)"),
    ("n_test_source", int, 1000, "source-domain test examples"),
    ("n_test_target", int, 1000, "target-domain test examples"),
    ("n_classes", int, 2, "number of labels"),
    ("core_per_class", int, 4, "core words per class"),
    ("spurious_per_class", int, 2, "spurious words per class"),
    ("filler_words", int, 40, "neutral filler words"),
    ("forms_per_word", int, 3, "surface forms per word (synonym set size)"),
    ("form_decay", float, 0.3, "geometric frequency decay across surface forms"),
    ("rho_core", float, 0.8, "P(core token agrees with label)"),
    ("rho_src", float, 0.95, "P(spurious token agrees with label), source"),
    ("rho_tgt", float, 0.05, "P(spurious token agrees with label), target"),
    ("length_min", int, 6, "shortest example"),
    ("length_max", int, 12, "longest example"),
]

_MODEL = [
    (f.name, {"int": int, "float": float, "bool": _bool, "str": str}[f.type], f.default, f"model option {f.name}")
    for f in TrainConfig.__dataclass_fields__.values()
    if f.name not in ("seed", "T")
]

_DATA = [
    ("train", str, ..., "training set (label<TAB>domain<TAB>tokens)"),
    ("valid", _str, None, "validation set; default holds out part of --train"),
    ("validation_fraction", float, 0.1, "held-out share of --train when --valid is absent"),
    ("test_source", _str, None, "source-domain test set"),
    ("test_target", _str, None, "target-domain test set"),
    ("vocab", _str, None, "vocabulary file; default is built from --train"),
    ("synonyms", _str, None, "synonym table; enables attacked accuracy on --test-source"),
]

_ATTACK = [
    ("method", str, "greedy", "greedy | population"),
    ("budget", _opt_int, None, "max substitutions per example; default a fraction of its length"),
    ("budget_fraction", float, 0.25, "budget as a fraction of tokens when --budget is unset"),
    ("scoring", str, "prob_drop", "greedy ranking: prob_drop | saliency"),
    ("max_queries", int, 2000, "model queries per example"),
    ("population", int, 8, "population size (population attack)"),
    ("generations", int, 10, "generations (population attack)"),
    ("attack_limit", _opt_int, None, "attack only the first N test examples"),
]

COMMANDS = {
    "gen-data": [("out", str, ..., "output directory")] + _SHIFT,
    "train": [("out", str, ..., "output directory")] + _DATA + _MODEL + _ATTACK,
    "sweep": [
        ("out", str, ..., "output directory"),
        ("param", str, "beta", "beta | lambda_tc"),
        ("grid", str, TABLE4_GRID, "comma-separated values"),
        ("seeds", str, "0,1,2", "comma-separated seeds"),
        ("jobs", _opt_int, None, "worker processes; default all cores"),
    ]
    + _DATA
    + _MODEL
    + _ATTACK,
    "attack": [
        ("out", str, ..., "output directory"),
        ("checkpoint", str, ..., "checkpoint JSON"),
        ("data", str, ..., "test set to attack"),
        ("synonyms", str, ..., "synonym table"),
    ]
    + _ATTACK,
    "verify-bounds": [
        ("out", _str, None, "output directory; default prints the summary only"),
        ("n_joints", int, 100, "random joints to check"),
        ("sizes", str, "4x4x4", "alphabet sizes of X, Y, Z"),
    ],
    "saliency": [
        ("out", str, ..., "output directory"),
        ("checkpoint", str, ..., "checkpoint JSON"),
        ("text", _str, None, "whitespace-separated input tokens"),
        ("input", _str, None, "file holding the input tokens"),
    ],
}
for _opts in COMMANDS.values():
    _opts.append(("seed", int, 0, f"random seed (falls back to ${SEED_ENV})"))


def build_parser():
    parser = argparse.ArgumentParser(prog="dsnt", description="Disentangled-representation text classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value file; flags override it")
        for key, conv, default, help_ in opts:
            shown = "required" if default is ... else f"default {default}"
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=str, help=f"{help_} ({shown})")
    rerun = sub.add_parser("rerun", help="repeat a run from its manifest")
    rerun.add_argument("manifest")
    rerun.add_argument("--out", help="write to this directory instead of the recorded one")
    return parser


def read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(command, flags, file_values):
    """Merge defaults, environment seed, config file and flags (later wins)."""
    opts = {key: (conv, default) for key, conv, default, _ in COMMANDS[command]}
    unknown = sorted(set(file_values) - set(opts))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    raw = {key: default for key, (conv, default) in opts.items()}
    if SEED_ENV in os.environ:
        raw["seed"] = os.environ[SEED_ENV]
    raw.update(file_values)
    raw.update(flags)
    missing = [key for key, v in raw.items() if v is ...]
    if missing:
        raise UsageError("the following arguments are required: " + ", ".join("--" + k.replace("_", "-") for k in missing))
    out = {}
    for key, value in raw.items():
        conv = opts[key][0]
        try:
            out[key] = conv(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise UsageError(f"--{key.replace('_', '-')}: {exc}") from None
    return out


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _abs(path):
    return None if path is None else str(Path(path).resolve())


class Run:
    """Collects what the manifest needs while a command executes."""

    def __init__(self, command, flags, file_values, config_file, opts):
        self.command = command
        self.opts = opts
        self.manifest = {
            "command": command,
            "config_file": _abs(config_file),
            "config_file_values": file_values,
            "flags": flags,
            "resolved": opts,
            "seed": opts["seed"],
            "inputs": {},
            "outputs": [],
            "notes": {},
            "code_version": code_version(),
            "started": _now(),
        }

    def input(self, name, path):
        if path is not None:
            self.manifest["inputs"][name] = _abs(path)

    def output(self, path):
        self.manifest["outputs"].append(Path(path).name)
        return path

    def finish(self, out_dir, **timings):
        self.manifest["finished"] = _now()
        self.manifest["timings"] = timings
        if out_dir is not None:
            _dump(Path(out_dir) / "manifest.json", self.manifest)


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _print_table(rows, header):
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line)
    print("  ".join("-" * w for w in widths))
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))


def _fmt(x):
    return "-" if x is None else f"{x:.4f}"


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(run):
    o = run.opts
    try:
        spec = ShiftSpec(**{k: o[k] for k in ShiftSpec.__dataclass_fields__ if k != "seed"}, seed=o["seed"])
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(o["out"])
    train_set, test_src, test_tgt = generate_shift_dataset(spec, o["n_train"], o["n_test_source"], o["n_test_target"])
    vocab = build_vocabulary(spec)
    for name, examples in (("train.tsv", train_set), ("test_source.tsv", test_src), ("test_target.tsv", test_tgt)):
        write_examples(run.output(out / name), examples)
    vocab.save(run.output(out / "vocab.txt"))
    SynonymTable.from_spec(spec, vocab).save(run.output(out / "synonyms.tsv"), vocab)
    rows = [(name, len(ex)) for name, ex in (("train", train_set), ("test_source", test_src), ("test_target", test_tgt))]
    _print_table(rows, ("split", "examples"))
    run.finish(out)
    return 0


def _load_vocab(o, train_examples):
    if o["vocab"] is not None:
        return Vocabulary.load(o["vocab"])
    return Vocabulary.from_corpus(ex.tokens for ex in train_examples)


def _encode(examples, vocab):
    X, y = to_arrays(examples, vocab)
    oov = sorted({t for ex in examples for t in ex.tokens if t not in vocab})
    return (X, y), oov


def _data(run):
    """Index-encoded splits plus the vocabulary and synonym table."""
    o = run.opts
    for key in ("train", "valid", "test_source", "test_target", "vocab", "synonyms"):
        run.input(key, o.get(key))
    train_ex = read_examples(o["train"])
    vocab = _load_vocab(o, train_ex)
    (X, y), _ = _encode(train_ex, vocab)
    if o["valid"] is not None:
        (Xv, yv), _ = _encode(read_examples(o["valid"]), vocab)
        train_set, valid_set = (X, y), (Xv, yv)
    else:
        perm = np.random.default_rng([o["seed"], 3]).permutation(len(X))
        n_val = max(1, int(round(o["validation_fraction"] * len(X))))
        if n_val >= len(X):
            raise UsageError("--validation-fraction leaves no training data")
        va, tr = perm[:n_val], perm[n_val:]
        train_set = ([X[i] for i in tr], y[tr])
        valid_set = ([X[i] for i in va], y[va])
    eval_sets, oov = {}, {}
    for name in ("source", "target"):
        path = o[f"test_{name}"]
        if path is not None:
            eval_sets[name], unseen = _encode(read_examples(path), vocab)
            if unseen:
                oov[name] = len(unseen)
    if oov:
        run.manifest["notes"]["oov_token_types"] = oov
    table = None
    if o["synonyms"] is not None:
        if not Path(o["synonyms"]).is_file():
            raise FileNotFoundError(f"synonym table not found: {o['synonyms']}")
        table = SynonymTable.load(o["synonyms"], vocab)
    n_classes = max(2, int(max(train_set[1].max(), valid_set[1].max())) + 1)
    return vocab, train_set, valid_set, eval_sets, table, n_classes


def _train_config(o, n_classes):
    try:
        return TrainConfig.from_dict({**{k: o[k] for k, *_ in _MODEL}, "seed": o["seed"], "T": n_classes})
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _attack_config(o):
    return AttackConfig(
        method=o["method"],
        budget=o["budget"],
        budget_fraction=o["budget_fraction"],
        scoring=o["scoring"],
        max_queries=o["max_queries"],
        population=o["population"],
        generations=o["generations"],
        seed=o["seed"],
    )


def cmd_train(run):
    o = run.opts
    out = _out_dir(o["out"])
    vocab, train_set, valid_set, eval_sets, table, n_classes = _data(run)
    config = _train_config(o, n_classes)
    model, record = train(config, train_set, valid_set, vocab=vocab)
    evaluate(model, record, eval_sets)
    if table is not None and "source" in eval_sets:
        Xa, ya = eval_sets["source"]
        n = o["attack_limit"]
        if n is not None:
            Xa, ya = Xa[:n], ya[:n]
        rep = evaluate_robustness(model, Xa, ya, table, _attack_config(o))
        record.robustness = rep
        record.accuracies["clean"] = rep["clean"]
        record.accuracies["attacked"] = rep["under_attack"]
    Path(run.output(out / "checkpoint.json")).write_text(checkpoint_text(model), encoding="utf-8")
    (out / "record.jsonl").write_text(record.to_json(timestamps=False) + "\n", encoding="utf-8")
    run.output(out / "record.jsonl")
    rows = [(k, _fmt(v)) for k, v in sorted(record.accuracies.items())]
    rows.append(("best_epoch", record.best_epoch))
    _print_table(rows, ("metric", config.family))
    run.finish(out, wall_clock=record.wall_clock)
    return 0


def _csv(text, conv, flag):
    try:
        vals = [conv(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--{flag}: {exc}") from None
    if not vals:
        raise UsageError(f"--{flag} is empty")
    return vals


def cmd_sweep(run):
    o = run.opts
    if o["param"] not in ("beta", "lambda_tc"):
        raise UsageError("--param must be beta or lambda_tc")
    grid = _csv(o["grid"], float, "grid")
    seeds = _csv(o["seeds"], int, "seeds")
    out = _out_dir(o["out"])
    vocab, train_set, valid_set, eval_sets, table, n_classes = _data(run)
    template = _train_config(o, n_classes)
    if o["attack_limit"] is not None and "source" in eval_sets:
        X, y = eval_sets["source"]
        n = o["attack_limit"]
        eval_sets = {**eval_sets, "source": (X[:n], y[:n])}
        run.manifest["notes"]["source_test_truncated_to"] = n
    records = sweep(
        template, o["param"], grid, seeds, train_set, valid_set, len(vocab), eval_sets, table,
        _attack_config(o) if table is not None else None, jobs=o["jobs"],
    )
    lines = "".join(r.to_json(timestamps=False) + "\n" for r in records)
    Path(run.output(out / "records.jsonl")).write_text(lines, encoding="utf-8")
    metrics = sorted({k for r in records for k in r.accuracies})
    rows = []
    for v in grid:
        cell = [r for r in records if r.config[o["param"]] == v]
        failed = sum(r.error is not None for r in cell)
        row = [f"{v:g}"]
        for m in metrics:
            vals = [r.accuracies[m] for r in cell if m in r.accuracies]
            row.append(_fmt(float(np.median(vals))) if vals else "-")
        rows.append(row + [failed])
    _print_table(rows, [o["param"]] + [f"median {m}" for m in metrics] + ["failed"])
    run.finish(out, wall_clock=sum(r.wall_clock for r in records))
    return 0


def cmd_attack(run):
    o = run.opts
    for key in ("checkpoint", "data", "synonyms"):
        run.input(key, o[key])
    if not Path(o["synonyms"]).is_file():
        raise FileNotFoundError(f"synonym table not found: {o['synonyms']}")
    model = load_checkpoint(o["checkpoint"])
    if model.vocab is None:
        raise DsntError(f"checkpoint {o['checkpoint']} has no vocabulary")
    (X, y), oov = _encode(read_examples(o["data"]), model.vocab)
    if oov:
        run.manifest["notes"]["oov_token_types"] = len(oov)
    if o["attack_limit"] is not None:
        X, y = X[: o["attack_limit"]], y[: o["attack_limit"]]
    table = SynonymTable.load(o["synonyms"], model.vocab).validate(model.vocab_size)
    out = _out_dir(o["out"])
    report = evaluate_robustness(model, X, y, table, _attack_config(o))
    _dump(run.output(out / "report.json"), report)
    _print_table([(k, _fmt(report[k]) if k != "n" else report[k]) for k in sorted(report)], ("field", "value"))
    run.finish(out)
    return 0


def _sizes(text):
    try:
        sizes = tuple(int(s) for s in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise UsageError(f"--sizes must look like 4x4x4, got {text!r}") from None
    if len(sizes) != 3 or min(sizes) < 1:
        raise UsageError("--sizes needs three positive sizes")
    if int(np.prod(sizes)) > MAX_TABLE:
        raise UsageError(f"--sizes {text} exceeds the {MAX_TABLE}-entry cap")
    return sizes


def cmd_verify_bounds(run):
    o = run.opts
    sizes = _sizes(o["sizes"])
    if o["n_joints"] < 1:
        raise UsageError("--n-joints must be positive")
    summary = verify_bounds(o["n_joints"], sizes, o["seed"])
    rows = [
        ("joints", summary["n_joints"]),
        ("sizes", "x".join(map(str, sizes))),
        ("min I(Z;Y) - lower", f"{summary['min_lower_gap']:.3e}"),
        ("min upper - I(Z;X)", f"{summary['min_upper_gap']:.3e}"),
        ("max gap at tight q, r", f"{summary['max_tight_gap']:.3e}"),
        ("violations", len(summary["violations"])),
    ]
    _print_table(rows, ("check", "value"))
    for v in summary["violations"]:
        print("violation:", v)
    print("PASS" if summary["passed"] else "FAIL")
    out = None
    if o["out"] is not None:
        out = _out_dir(o["out"])
        _dump(run.output(out / "summary.json"), summary)
    run.finish(out)
    return 0 if summary["passed"] else 1


def cmd_saliency(run):
    o = run.opts
    if (o["text"] is None) == (o["input"] is None):
        raise UsageError("give exactly one of --text and --input")
    run.input("checkpoint", o["checkpoint"])
    run.input("input", o["input"])
    text = o["text"] if o["text"] is not None else Path(o["input"]).read_text(encoding="utf-8")
    tokens = text.split()
    if not tokens:
        raise UsageError("input has no tokens")
    model = load_checkpoint(o["checkpoint"])
    if model.vocab is not None:
        idx = model.vocab.encode(tokens)
        oov = [t for t in tokens if t not in model.vocab]
    else:
        idx = [int(t) if t.isdigit() and int(t) < model.vocab_size else UNK for t in tokens]
        oov = [t for t, i in zip(tokens, idx) if i == UNK and t != str(UNK)]
    run.manifest["notes"]["oov_tokens"] = oov
    smap = head_saliency(model, idx, token_strings=tokens)
    out = _out_dir(o["out"])
    export_heatmap(smap, run.output(out / "heatmap.json"))
    div = head_divergence(smap) if smap.n_heads > 1 else None
    _print_table([(f"head {i}", " ".join(f"{v:.2f}" for v in row)) for i, row in enumerate(smap.normalized())], ("head", " ".join(tokens)))
    print("head_divergence:", "n/a (one head)" if div is None else f"{div:.6f}")
    run.finish(out)
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "attack": cmd_attack,
    "verify-bounds": cmd_verify_bounds,
    "saliency": cmd_saliency,
}


def manifest_argv(manifest, out=None):
    """Command line that reproduces a manifest's run from its resolved options."""
    argv = [manifest["command"]]
    for key, value in manifest["resolved"].items():
        if key == "out" and out is not None:
            value = out
        if value is None:
            continue
        argv += ["--" + key.replace("_", "-"), str(value)]
    return argv


def _execute(parser, argv):
    ns = parser.parse_args(argv)
    if ns.command == "rerun":
        try:
            manifest = json.loads(Path(ns.manifest).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read manifest {ns.manifest}: {exc}") from None
        return _execute(parser, manifest_argv(manifest, getattr(ns, "out", None)))
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    config_file = getattr(ns, "config", None)
    file_values = read_config_file(config_file) if config_file else {}
    opts = resolve(ns.command, flags, file_values)
    return HANDLERS[ns.command](Run(ns.command, flags, file_values, config_file, opts))


def main(argv=None):
    parser = build_parser()
    try:
        return _execute(parser, sys.argv[1:] if argv is None else list(argv))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dsnt: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except (DsntError, OSError, ValueError) as exc:
        print(f"dsnt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
