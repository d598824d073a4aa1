import json

import numpy as np
import pytest
import scipy.sparse as sp

from classrescal import (
    EmptyInputError,
    EntityIndex,
    LabelSet,
    ParseError,
    SizeError,
    SparseRelationTensor,
    SynthSpec,
    balanced_subsample,
    generate_planted,
    load_labels,
    load_triples,
)
from classrescal.graph_data import load_index, save_index, write_triples

from conftest import FIG1_TRIPLES, write_tsv


def test_fig1_tensor(fig1_path):
    tensor, ents, rels = load_triples(fig1_path)
    assert tensor.shape == (5, 5, 3)
    assert tensor.nnz == 10
    # (u1, r2, u5) -> T[1,5,2] in 1-based indexing
    assert tensor.slices[1][0, 4] == 1
    assert tensor.slices[rels["r2"]][ents["u1"], ents["u5"]] == 1


def test_first_appearance_indexing(fig1_path):
    _, ents, rels = load_triples(fig1_path)
    assert ents.ids == ("u1", "u2", "u3", "u4", "u5")
    assert rels.ids == ("r1", "r2", "r3")


def test_empty_declared_tensor():
    t = SparseRelationTensor.from_index_triples([], n_entities=3, n_relations=1)
    assert t.shape == (3, 3, 1)
    assert t.nnz == 0
    assert np.all(t.to_dense() == 0)


def test_duplicates_collapse(tmp_path):
    path = write_tsv(tmp_path / "dup.tsv", [("a", "r", "b")] * 4)
    tensor, _, _ = load_triples(path)
    assert tensor.nnz == 1
    assert tensor.slices[0].data.tolist() == [1.0]


def test_empty_file_raises(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    with pytest.raises(EmptyInputError):
        load_triples(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("a\tr\tb\nc\td\n")
    with pytest.raises(ParseError) as err:
        load_triples(path)
    assert err.value.line_number == 2
    assert ":2:" in str(err.value)


def test_directed_relations_preserved(fig1_path):
    tensor, ents, rels = load_triples(fig1_path)
    s = tensor.slices[rels["r2"]]
    assert s[ents["u1"], ents["u5"]] == 1
    assert s[ents["u5"], ents["u1"]] == 0


def test_self_loops_kept(tmp_path):
    tensor, _, _ = load_triples(write_tsv(tmp_path / "loop.tsv", [("a", "r", "a")]))
    assert tensor.slices[0][0, 0] == 1


def test_non_binary_rejected():
    with pytest.raises(ValueError):
        SparseRelationTensor([sp.csr_matrix(np.array([[0.0, 2.0], [0.0, 0.0]]))])


def test_roundtrip(tmp_path, planted_small):
    tensor, _ = planted_small
    ents = EntityIndex(f"e{i}" for i in range(tensor.n_entities))
    rels = EntityIndex(f"r{k}" for k in range(tensor.n_relations))
    path = tmp_path / "t.tsv"
    write_triples(path, tensor, ents, rels)
    again, ents2, rels2 = load_triples(path)
    # index order may differ after reload; compare through ids
    perm = np.array([ents2[e] for e in ents.ids if e in ents2])
    assert again.nnz == tensor.nnz
    live = np.flatnonzero(tensor.degrees() > 0)
    assert len(perm) == len(live)
    for k in range(tensor.n_relations):
        kk = rels2[rels.id_of(k)]
        orig = tensor.slices[k][live][:, live].toarray()
        back = again.slices[kk][perm][:, perm].toarray()
        np.testing.assert_array_equal(orig, back)


def test_load_labels(fig1_path, tmp_path):
    _, ents, _ = load_triples(fig1_path)
    path = tmp_path / "labels.txt"
    path.write_text("u1 +1\nu4 +1\nu2 -1\n")
    labels = load_labels(path, ents)
    assert labels.entries == {ents["u1"]: 1, ents["u4"]: 1, ents["u2"]: -1}
    assert labels.positive_count == 2 and labels.negative_count == 1


def test_load_labels_direct_mapping(tmp_path):
    ents = EntityIndex(["u1", "u2", "u3", "u4"])
    path = tmp_path / "labels.txt"
    path.write_text("u1 +1\nu4 +1\nu2 -1\n")
    assert load_labels(path, ents).entries == {0: 1, 3: 1, 1: -1}


def test_load_labels_empty(tmp_path):
    path = tmp_path / "labels.txt"
    path.write_text("")
    labels = load_labels(path, EntityIndex(["a"]))
    assert len(labels) == 0
    assert labels.positive_count == 0 and labels.negative_count == 0


def test_load_labels_unknown_id(tmp_path):
    path = tmp_path / "labels.txt"
    path.write_text("a\t+1\nghost\t-1\n")
    labels = load_labels(path, EntityIndex(["a"]))
    assert labels.skipped_ids == ("ghost",)
    assert labels.entries == {0: 1}


@pytest.mark.parametrize("token", ["0", "2", "spam", "+2"])
def test_load_labels_bad_token(tmp_path, token):
    path = tmp_path / "labels.txt"
    path.write_text(f"a\t{token}\n")
    with pytest.raises(ParseError):
        load_labels(path, EntityIndex(["a"]))


def test_index_sidecar_roundtrip(tmp_path):
    ents, rels = EntityIndex(["x", "y"]), EntityIndex(["follows"])
    save_index(tmp_path / "idx.json", ents, rels)
    assert json.loads((tmp_path / "idx.json").read_text())["entities"] == ["x", "y"]
    e2, r2 = load_index(tmp_path / "idx.json")
    assert e2 == ents and r2 == rels


def test_subsample_identity_drops_isolated():
    # entity 2 is isolated
    t = SparseRelationTensor.from_index_triples([(0, 0, 1), (3, 0, 0)], 4, 1)
    labels = LabelSet({0: 1, 1: -1, 2: 1, 3: -1})
    sub, idx, lab = balanced_subsample(t, labels, 2, seed=0)
    assert idx.ids == ("0", "1", "3")
    assert sub == t.subtensor([0, 1, 3])
    assert lab.entries == {0: 1, 1: -1, 2: -1}


def test_subsample_deterministic():
    tensor, labels = generate_planted(SynthSpec(80, 3, 0.1, 0.02, seed=3))
    a = balanced_subsample(tensor, labels, 50, seed=7)
    b = balanced_subsample(tensor, labels, 50, seed=7)
    assert a[0].n_entities <= 100
    assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
    assert a[0].nnz <= tensor.nnz
    assert np.all(a[0].degrees() >= 1)


def test_subsample_discards_nodes_linked_only_outside():
    # 0-1 linked, 2 links only to 4 which has no label and is never sampled
    t = SparseRelationTensor.from_index_triples([(0, 0, 1), (2, 0, 4)], 5, 1)
    labels = LabelSet({0: 1, 1: -1, 2: 1, 3: -1})
    sub, idx, _ = balanced_subsample(t, labels, 2, seed=1)
    assert "2" not in idx and "3" not in idx
    assert sub.n_entities == 2


def test_subsample_insufficient():
    t = SparseRelationTensor.from_index_triples([(0, 0, 1)], 2, 1)
    with pytest.raises(SizeError):
        balanced_subsample(t, LabelSet({0: 1, 1: -1}), 2, seed=0)


def test_labelset_validation():
    with pytest.raises(ValueError):
        LabelSet({0: 0})
