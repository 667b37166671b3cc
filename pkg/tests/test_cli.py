import hashlib
import json

import jsonschema
import numpy as np
import pytest

from dsnt.bench import read_examples, token_role
from dsnt.cli import main, manifest_argv
from dsnt.saliency import HEATMAP_SCHEMA, load_heatmap

SMALL = ["--n-train", "400", "--n-test-source", "120", "--n-test-target", "120", "--filler-words", "12"]
FAST = ["--max-epochs", "3"]


def _digest(directory, skip=("manifest.json",)):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir()) if p.name not in skip}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out), "--seed", "2"] + SMALL) == 0
    return out


def _data_flags(d):
    return ["--train", str(d / "train.tsv"), "--test-source", str(d / "test_source.tsv"), "--test-target", str(d / "test_target.tsv")]


@pytest.fixture(scope="module")
def checkpoint(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    argv = ["train", "--out", str(out), "--family", "regularizer", "--beta", "0.1", "--encoder", "cnn", "--K", "3"]
    assert main(argv + _data_flags(data) + FAST) == 0
    return out / "checkpoint.json"


def test_gen_data_deterministic(data, tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--seed", "2"] + SMALL) == 0
    assert _digest(tmp_path) == _digest(data)
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["seed"] == 2 and "train.tsv" in manifest["outputs"]


def test_gen_data_spurious_rate(tmp_path):
    n = 2000
    assert main(["gen-data", "--out", str(tmp_path), "--n-train", str(n), "--rho-src", "0.9", "--seed", "8"]) == 0
    hits = []
    for ex in read_examples(tmp_path / "train.tsv"):
        (spur,) = [token_role(t)[1] for t in ex.tokens if token_role(t)[0] == "spur"]
        hits.append(spur == ex.label)
    assert abs(np.mean(hits) - 0.9) < 3 * np.sqrt(0.9 * 0.1 / n)


def test_missing_required_flag(capsys):
    assert main(["gen-data"]) == 2
    assert "--out" in capsys.readouterr().err
    assert main(["train", "--out", "x"]) == 2
    assert main(["no-such-command"]) == 2


def test_bad_values_are_usage_errors(data, tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--rho-core", "0.2"]) == 2
    assert main(["verify-bounds", "--sizes", "4x4"]) == 2
    assert main(["train", "--out", str(tmp_path)] + _data_flags(data) + ["--family", "lstm"]) == 2


def test_baseline_equals_unpenalised_single_head(data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--out", str(a), "--family", "baseline"] + _data_flags(data) + FAST) == 0
    assert main(["train", "--out", str(b), "--family", "regularizer", "--beta", "0", "--K", "1"] + _data_flags(data) + FAST) == 0
    ra = json.loads((a / "record.jsonl").read_text())
    rb = json.loads((b / "record.jsonl").read_text())
    assert ra["accuracies"] == rb["accuracies"] and ra["epochs"] == rb["epochs"]


def test_config_precedence(data, tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nfamily = vib\nbeta = 0.5\nmax-epochs = 1\nseed = 4\n")
    monkeypatch.setenv("DSNT_SEED", "9")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--beta", "0.01"] + _data_flags(data)) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["resolved"]["beta"] == 0.01 and m["resolved"]["family"] == "vib"
    assert m["seed"] == 4
    assert m["config_file_values"]["beta"] == "0.5" and m["flags"]["beta"] == "0.01"

    out2 = tmp_path / "env"
    assert main(["gen-data", "--out", str(out2)] + SMALL) == 0
    assert json.loads((out2 / "manifest.json").read_text())["seed"] == 9

    cfg.write_text("colour = blue\n")
    assert main(["train", "--config", str(cfg), "--out", str(out)] + _data_flags(data)) == 2


def test_training_failure_exits_one(data, tmp_path, capsys):
    argv = ["train", "--out", str(tmp_path), "--family", "vib", "--beta", "0.1", "--lr", "1e200", "--max-epochs", "2"]
    assert main(argv + _data_flags(data)) == 1
    err = capsys.readouterr().err
    assert "epoch" in err


def test_attack_command(checkpoint, data, tmp_path):
    base = ["attack", "--checkpoint", str(checkpoint), "--data", str(data / "test_source.tsv"), "--synonyms", str(data / "synonyms.tsv")]
    assert main(base + ["--out", str(tmp_path / "b0"), "--budget", "0"]) == 0
    rep = json.loads((tmp_path / "b0" / "report.json").read_text())
    assert rep["under_attack"] == rep["clean"]
    for name in ("r1", "r2"):
        assert main(base + ["--out", str(tmp_path / name), "--attack-limit", "40"]) == 0
    r1 = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert (tmp_path / "r1" / "report.json").read_bytes() == (tmp_path / "r2" / "report.json").read_bytes()
    assert 0 <= r1["under_attack"] <= r1["clean"] <= 1
    missing = ["attack", "--out", str(tmp_path / "m"), "--checkpoint", str(checkpoint), "--data", str(data / "test_source.tsv")]
    assert main(missing + ["--synonyms", str(tmp_path / "nope.tsv")]) == 1


def test_verify_bounds_command(tmp_path, capsys):
    assert main(["verify-bounds", "--out", str(tmp_path / "a")]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")
    assert main(["verify-bounds", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_saliency_command(checkpoint, tmp_path, capsys):
    assert main(["saliency", "--out", str(tmp_path / "one"), "--checkpoint", str(checkpoint), "--text", "core0_0~0"]) == 0
    smap = load_heatmap(tmp_path / "one" / "heatmap.json")
    assert smap.scores.shape == (3, 1)

    src = tmp_path / "in.txt"
    src.write_text("w1~0 core1_2~0 foo spur0_0~0\n")
    assert main(["saliency", "--out", str(tmp_path / "two"), "--checkpoint", str(checkpoint), "--input", str(src)]) == 0
    doc = json.loads((tmp_path / "two" / "heatmap.json").read_text())
    jsonschema.validate(doc, HEATMAP_SCHEMA)
    assert doc["tokens"] == ["w1~0", "core1_2~0", "foo", "spur0_0~0"]
    m = json.loads((tmp_path / "two" / "manifest.json").read_text())
    assert m["notes"]["oov_tokens"] == ["foo"]
    assert "head_divergence" in capsys.readouterr().out

    assert main(["saliency", "--out", str(tmp_path / "x"), "--checkpoint", str(checkpoint)]) == 2


def test_sweep_and_rerun(data, tmp_path):
    out = tmp_path / "sweep"
    argv = ["sweep", "--out", str(out), "--param", "beta", "--grid", "0,0.2", "--seeds", "0,1", "--jobs", "1"]
    argv += _data_flags(data) + ["--synonyms", str(data / "synonyms.tsv"), "--attack-limit", "20", "--max-epochs", "2"]
    assert main(argv) == 0
    rows = [json.loads(line) for line in (out / "records.jsonl").read_text().splitlines()]
    assert len(rows) == 4 and all(r["error"] is None for r in rows)

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest_argv(manifest)[0] == "sweep"
    again = tmp_path / "again"
    assert main(["rerun", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert _digest(again) == _digest(out)


def test_inputs_are_not_mutated(data, checkpoint, tmp_path):
    before = _digest(data)
    ck = hashlib.sha256(checkpoint.read_bytes()).hexdigest()
    main(["train", "--out", str(tmp_path / "t"), "--max-epochs", "1", "--synonyms", str(data / "synonyms.tsv"), "--attack-limit", "5"] + _data_flags(data))
    main(["saliency", "--out", str(tmp_path / "s"), "--checkpoint", str(checkpoint), "--text", "a b"])
    assert _digest(data) == before
    assert hashlib.sha256(checkpoint.read_bytes()).hexdigest() == ck
