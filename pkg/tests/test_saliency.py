import json

import jsonschema
import numpy as np
import pytest

from dsnt.autograd import Tensor, matmul
from dsnt.config import TrainConfig
from dsnt.exceptions import ContractError, EmptyInputError
from dsnt.model import Model
from dsnt.saliency import HEATMAP_SCHEMA, SaliencyMap, export_heatmap, head_divergence, head_saliency, load_heatmap
from oracles import fd_saliency


class LinearHead:
    """One head, z = A e over the embeddings of a one-token input."""

    def __init__(self, A, emb):
        self.A, self.emb = np.asarray(A, float), np.asarray(emb, float)
        self.vocab = None

    def embed(self, sequences):
        return Tensor(self.emb[None, None, :]), np.ones((1, 1), dtype=bool)

    def heads_from_embedded(self, emb, mask):
        return matmul(emb, Tensor(self.A.T)).reshape(1, 1, self.A.shape[0])


def test_linear_map_column_sums():
    smap = head_saliency(LinearHead([[1.0, -2.0], [0.0, 3.0]], [0.3, -0.7]), [2])
    np.testing.assert_allclose(smap.scores, [[6.0]], atol=1e-12)


@pytest.mark.parametrize("family,encoder", [("regularizer", "bow-mlp"), ("regularizer", "cnn"), ("vib", "cnn"), ("vib_tc", "cnn")])
def test_saliency_matches_finite_differences(family, encoder, rng):
    model = Model(TrainConfig(family=family, encoder=encoder, K=2, D=4, d=5, emb_dim=3, seed=1), vocab_size=12)
    for _ in range(5):
        tokens = list(rng.integers(2, 12, size=rng.integers(1, 7)))
        smap = head_saliency(model, tokens)
        np.testing.assert_allclose(smap.scores, fd_saliency(model, tokens), rtol=1e-3, atol=1e-9)


def test_bow_positions_share_saliency_and_padding_is_zero():
    model = Model(TrainConfig(family="regularizer", K=3, seed=2), vocab_size=20)
    smap = head_saliency(model, [4, 9, 13, 4])
    for row in smap.scores:
        np.testing.assert_allclose(row, np.full(4, row[0]), rtol=1e-12)
    padded = head_saliency(model, [4, 0, 13])
    np.testing.assert_array_equal(padded.scores[:, 1], 0.0)


def test_zero_projection_gives_zero_saliency():
    model = Model(TrainConfig(family="regularizer", encoder="cnn", K=2, seed=0), vocab_size=10)
    model.params["heads.W"].data[0] = 0.0
    smap = head_saliency(model, [3, 4, 5])
    np.testing.assert_array_equal(smap.scores[0], 0.0)
    assert np.all(smap.scores[1] >= 0)


def test_empty_input():
    model = Model(TrainConfig(), vocab_size=10)
    with pytest.raises(EmptyInputError):
        head_saliency(model, [])


def test_export_and_round_trip(tmp_path, rng):
    smap = SaliencyMap(rng.uniform(0, 3, size=(3, 4)), ["a", "b", "c", "d"])
    path = tmp_path / "h.json"
    export_heatmap(smap, path)
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, HEATMAP_SCHEMA)
    np.testing.assert_allclose(np.max(doc["heads"], axis=1), 1.0)
    back = load_heatmap(path)
    assert back.scores.tobytes() == smap.scores.tobytes() and back.tokens == smap.tokens


def test_export_degenerate_maps(tmp_path):
    export_heatmap(SaliencyMap(np.zeros((2, 3)), ["a", "b", "c"]), tmp_path / "z.json")
    assert json.loads((tmp_path / "z.json").read_text())["heads"] == [[0.0] * 3] * 2
    export_heatmap(SaliencyMap(np.array([[2.0], [0.0]]), ["a"]), tmp_path / "one.json")
    assert json.loads((tmp_path / "one.json").read_text())["heads"] == [[1.0], [0.0]]


def test_export_io_error_names_path(tmp_path):
    bad = tmp_path / "missing" / "h.json"
    with pytest.raises(OSError, match="missing"):
        export_heatmap(SaliencyMap(np.ones((1, 1)), ["a"]), bad)


def test_head_divergence_examples(rng):
    row = rng.uniform(0.1, 1, size=5)
    assert abs(head_divergence(SaliencyMap(np.stack([row, row]), list("abcde")))) < 1e-12
    disjoint = SaliencyMap(np.array([[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 3.0, 1.0]]), list("abcd"))
    assert head_divergence(disjoint) == 1.0
    S = rng.uniform(0, 1, size=(3, 5))
    scaled = S * np.array([[2.0], [0.1], [7.0]])
    np.testing.assert_allclose(head_divergence(SaliencyMap(S, list("abcde"))), head_divergence(SaliencyMap(scaled, list("abcde"))), atol=1e-12)
    assert 0 <= head_divergence(SaliencyMap(S, list("abcde"))) <= 2
    with pytest.raises(ContractError):
        head_divergence(SaliencyMap(np.ones((1, 2)), ["a", "b"]))


def test_map_validation():
    with pytest.raises(ContractError):
        SaliencyMap(np.ones((2, 3)), ["a"])
    with pytest.raises(ContractError):
        SaliencyMap(-np.ones((1, 1)), ["a"])
