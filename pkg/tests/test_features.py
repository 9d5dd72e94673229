import numpy as np
import pytest

from vscomplete.embed import EMPTY_DISPLAY, EmbeddingTable, HashEmbedder, embed_unique_strings
from vscomplete.errors import DimensionMismatch, MissingEmbedding
from vscomplete.features import (SYSTEM_SLOTS, FeatureMatrix, assemble_feature_matrix, assemble_features, feature_dim,
                                 one_hot_system)
from vscomplete.pool import CandidateEntry, CandidatePool


@pytest.mark.parametrize("system,slot", [("SNOMED-CT", 0), ("ICD-10-CM", 1), ("RxNorm", 2), ("LOINC", 3), ("CPT", 4),
                                         ("ICD-10-PCS", 5), ("HCPCS", 6), ("ATC", 7), ("OTHER", 7)])
def test_one_hot_slots(system, slot):
    v = one_hot_system(system)
    assert v.sum() == 1 and v[slot] == 1


def test_feature_dim():
    assert feature_dim(768) == 1545
    assert all(feature_dim(d) == 2 * d + 9 for d in range(1, 50))


def _pool(entries, title="T"):
    return CandidatePool("t", [CandidateEntry(*e) for e in entries], 0.5, title, 2)


def test_layout_at_small_dim():
    t = np.array([0.5, 0.5, 0.5, 0.5])
    e = np.array([1.0, 0.0, 0.0, 0.0])
    titles = EmbeddingTable(4, ["T"], t[None])
    displays = EmbeddingTable(4, ["disp"], e[None])
    X, y = assemble_features(_pool([("c", "ATC", "disp", 0.5, "s", 1)]), "T", titles, displays)
    assert np.array_equal(X[0], np.concatenate([t, e, [0, 0, 0, 0, 0, 0, 0, 1], [0.5]]))
    assert y.tolist() == [1.0]


def test_full_width_and_shared_title_block():
    strings = ["Asthma", "a", "b", EMPTY_DISPLAY]
    table = embed_unique_strings(strings, HashEmbedder(768))
    pool = _pool([("1", "SNOMED-CT", "a", 0.9, "s", 1), ("2", "LOINC", "", -0.2, "s", 0), ("3", "CPT", "b", 0.1, "s", 0)],
                 title="Asthma")
    X, y = assemble_features(pool, "Asthma", table, table)
    assert X.shape == (3, 1545)
    assert np.array_equal(X[0, :768], X[1, :768]) and np.array_equal(X[1, :768], X[2, :768])
    assert np.array_equal(X[1, 768:1536], table.get(EMPTY_DISPLAY))
    assert np.all(X[:, 1536:1544].sum(axis=1) == 1)
    assert np.all(np.abs(X[:, -1]) <= 1) and np.all(np.isfinite(X))


def test_missing_embeddings():
    titles = EmbeddingTable(2, ["T"], np.array([[1.0, 0.0]]))
    with pytest.raises(MissingEmbedding):
        assemble_features(_pool([("c", "LOINC", "unknown", 0.1, "s", 0)]), "T", titles, titles)
    with pytest.raises(MissingEmbedding):
        assemble_features(_pool([]), "nope", titles, titles)
    with pytest.raises(DimensionMismatch):
        assemble_features(_pool([]), "T", titles, EmbeddingTable(3, [], np.zeros((0, 3))))


def test_matrix_row_order_and_round_trip(tmp_path):
    table = embed_unique_strings(["T1", "T2", "a", "b"], HashEmbedder(8))
    pools = [CandidatePool("o1", [CandidateEntry("1", "LOINC", "a", 0.3, "s", 1)], 1.0, "T1", 1),
             CandidatePool("o2", [CandidateEntry("2", "CPT", "b", 0.2, "s", 0),
                                  CandidateEntry("3", "HCPCS", "a", 0.1, "s", 1)], 0.5, "T2", 2)]
    fm = assemble_feature_matrix(pools, table, table)
    assert fm.rows == [("o1", "1", "LOINC"), ("o2", "2", "CPT"), ("o2", "3", "HCPCS")]
    assert fm.y.tolist() == [1, 0, 1]
    again = assemble_feature_matrix(pools, table, table)
    assert np.array_equal(fm.X, again.X)
    fm.save(tmp_path / "f.bin")
    back = FeatureMatrix.load(tmp_path / "f.bin")
    assert np.array_equal(back.X, fm.X) and back.rows == fm.rows and back.dim == 8


def test_slot_order_constant():
    assert SYSTEM_SLOTS == ("SNOMED-CT", "ICD-10-CM", "RxNorm", "LOINC", "CPT", "ICD-10-PCS", "HCPCS", "OTHER")
