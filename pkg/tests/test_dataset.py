import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birdxfer.dataset import (
    EmbeddingRecord,
    EmbeddingTable,
    SpeciesVocabulary,
    aggregate_windows,
    flatten_frames,
    load_embedding_table,
    load_vocabulary,
    split_indices,
    summarize_table,
    train_val_split,
    write_embedding_table,
)
from birdxfer.errors import DataError
from birdxfer.pseudolabel import sigmoid

from conftest import write_fixture_table


def _table(n, dim=2, vocab=("a", "b")):
    ids = tuple(f"r{i // 4}" for i in range(n))
    starts = [5 * (i % 4) for i in range(n)]
    emb = np.arange(n * dim, dtype=float).reshape(n, dim)
    return EmbeddingTable(ids, starts, emb, SpeciesVocabulary(vocab))


class TestVocabulary:
    def test_file_order(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("grnsan\ncomior1\n\nlirplo\n")
        v = load_vocabulary(p)
        assert len(v) == 3
        assert v.index_of("comior1") == 1
        assert all(v.index_of(c) == i for i, c in enumerate(v.codes))

    def test_singleton(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("bncwoo3\n")
        v = load_vocabulary(p)
        assert v.codes == ("bncwoo3",) and v.index_of("bncwoo3") == 0

    def test_duplicate_named(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("grnsan\ngrnsan\n")
        with pytest.raises(DataError, match="grnsan"):
            load_vocabulary(p)

    def test_empty(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("\n\n")
        with pytest.raises(DataError, match="empty"):
            load_vocabulary(p)


class TestLoadTable:
    def test_schema_echo(self, four_row_table):
        t = load_embedding_table(*four_row_table)
        assert len(t) == 4 and t.embedding_dim == 2
        assert t.logits.shape == (4, 2)
        assert all(len(r.embedding) == 2 and len(r.logits) == 2 for r in t.records)
        assert t.source_tag == "fixture"

    def test_neg_inf_logit(self, four_row_table):
        t = load_embedding_table(*four_row_table)
        assert t.logits[1, 0] == -math.inf
        assert sigmoid(t.logits[1, 0]) == 0.0

    def test_header_dim_mismatch(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,0,1,2,3,0,0"], 3, ["a", "b"])
        doc = json.loads(manifest.read_text())
        doc["embedding_dim"] = 2
        manifest.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="3 embedding .* expects 2"):
            load_embedding_table(data, manifest)

    def test_nan_reports_row(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,0,1,2,0,0", "r,5,nan,2,0,0"], 2, ["a", "b"])
        with pytest.raises(DataError, match="row 2"):
            load_embedding_table(data, manifest)

    def test_neg_inf_rejected_in_embedding(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,0,-inf,2,0,0"], 2, ["a", "b"])
        with pytest.raises(DataError, match="row 1"):
            load_embedding_table(data, manifest)

    def test_positive_inf_logit_rejected(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,0,1,2,inf,0"], 2, ["a", "b"])
        with pytest.raises(DataError):
            load_embedding_table(data, manifest)

    def test_duplicate_key(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,0,1,2,0,0", "r,0,3,4,0,0"], 2, ["a", "b"])
        with pytest.raises(DataError, match="duplicate"):
            load_embedding_table(data, manifest)

    def test_bad_granularity(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,3,1,2,0,0"], 2, ["a", "b"])
        with pytest.raises(DataError, match="multiple of 5"):
            load_embedding_table(data, manifest)

    def test_without_logits(self, tmp_path):
        data, manifest = write_fixture_table(tmp_path, ["r,0,1,2"], 2, ["a", "b"], has_logits=False)
        t = load_embedding_table(data, manifest)
        assert not t.has_logits
        with pytest.raises(DataError, match="logits"):
            summarize_table(t, 0.5)


def test_round_trip(four_row_table, tmp_path):
    t = load_embedding_table(*four_row_table)
    out = tmp_path / "out"
    out.mkdir()
    write_embedding_table(t, out / "t.csv", out / "m.json")
    t2 = load_embedding_table(out / "t.csv", out / "m.json")
    assert t2.recording_ids == t.recording_ids
    assert np.array_equal(t2.interval_starts, t.interval_starts)
    assert np.array_equal(t2.embeddings, t.embeddings)
    assert np.array_equal(t2.logits, t.logits)
    assert t2.vocab == t.vocab and t2.source_tag == t.source_tag
    # a second write is byte-identical
    write_embedding_table(t2, out / "t2.csv", out / "m2.json")
    assert (out / "t.csv").read_bytes() == (out / "t2.csv").read_bytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=2, max_size=2), st.integers(0, 1000))
def test_round_trip_exact_floats(tmp_path_factory, values, slot):
    d = tmp_path_factory.mktemp("rt")
    t = EmbeddingTable(("x",), [5 * slot], [values], SpeciesVocabulary(("a",)), [[-math.inf]])
    write_embedding_table(t, d / "t.csv", d / "m.json")
    t2 = load_embedding_table(d / "t.csv", d / "m.json")
    assert t2.embeddings.tolist() == t.embeddings.tolist()


def test_from_records():
    v = SpeciesVocabulary(("a",))
    recs = [EmbeddingRecord("r", 0, np.array([1.0, 2.0]), np.array([0.5])), EmbeddingRecord("r", 5, np.array([3.0, 4.0]), np.array([-1.0]))]
    t = EmbeddingTable.from_records(recs, v)
    assert t.row_ids() == ["r_5", "r_10"]
    with pytest.raises(DataError, match="mixed"):
        EmbeddingTable.from_records([recs[0], EmbeddingRecord("r", 5, np.zeros(3))], v)


class TestSplit:
    def test_sizes(self):
        s = train_val_split(_table(10), 0.8, 7)
        assert (len(s.train), len(s.validation)) == (8, 2)
        s = train_val_split(_table(5), 0.5, 7)
        assert (len(s.train), len(s.validation)) == (2, 3)

    def test_deterministic(self):
        a = train_val_split(_table(10), 0.8, 7)
        b = train_val_split(_table(10), 0.8, 7)
        assert a.train.same_rows(b.train) and a.validation.same_rows(b.validation)

    def test_frozen_membership(self):
        # pins the SplitMix64 Fisher-Yates contract across platforms
        train_idx, val_idx = split_indices(10, 0.8, 7)
        assert train_idx.tolist() + val_idx.tolist() != list(range(10))
        assert sorted(train_idx.tolist() + val_idx.tolist()) == list(range(10))
        again = split_indices(10, 0.8, 7)
        assert np.array_equal(train_idx, again[0])

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(DataError):
            train_val_split(_table(10), frac, 0)

    @given(st.integers(1, 200), st.floats(0.01, 0.99), st.integers(0, 2**63))
    def test_partition(self, n, frac, seed):
        tr, va = split_indices(n, frac, seed)
        assert len(tr) == math.floor(frac * n)
        assert set(tr.tolist()).isdisjoint(va.tolist())
        assert sorted(tr.tolist() + va.tolist()) == list(range(n))


class TestAggregate:
    def test_two_point(self):
        assert aggregate_windows([[1, 3], [3, 5]]).tolist() == [2, 4]

    def test_identity(self):
        assert aggregate_windows([[7.25]]).tolist() == [7.25]

    def test_three(self):
        assert aggregate_windows([[0, 0], [0, 0], [6, 3]]).tolist() == [2, 1]

    def test_errors(self):
        with pytest.raises(DataError):
            aggregate_windows([])
        with pytest.raises(DataError):
            aggregate_windows([[1, 2], [1]])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=6), st.integers(1, 7))
    def test_copies_exact(self, v, n):
        assert aggregate_windows([v] * n).tolist() == np.asarray(v, dtype=float).tolist()


class TestFlatten:
    def test_row_major(self):
        assert flatten_frames([[1, 2], [3, 4]]).tolist() == [1, 2, 3, 4]

    def test_encodec_shape(self):
        frames = np.arange(750.0).reshape(5, 150)
        out = flatten_frames(frames)
        assert out.shape == (750,)
        assert np.array_equal(out.reshape(5, 150), frames)

    def test_single_row(self):
        assert flatten_frames([[1, 2, 3]]).tolist() == [1, 2, 3]

    def test_ragged(self):
        with pytest.raises(DataError, match="ragged"):
            flatten_frames([[1, 2], [3]])


class TestSummary:
    def test_hours(self):
        ids = tuple(f"r{i}" for i in range(720))
        t = EmbeddingTable(ids, [0] * 720, np.zeros((720, 1)), SpeciesVocabulary(("a",)), np.zeros((720, 1)))
        assert summarize_table(t, 0.5).hours == 1.0

    def test_saturation(self):
        logits = np.array([[10.0, -1.0], [-1.0, 10.0], [10.0, 0.0]])
        t = EmbeddingTable(("a", "b", "c"), [0, 0, 0], np.zeros((3, 1)), SpeciesVocabulary(("x", "y")), logits)
        assert summarize_table(t, 0.5).call_fraction == 1.0

    def test_quarter(self, four_row_table):
        t = load_embedding_table(*four_row_table)
        # hand count: only row 0 has a logit (2.0) above sigmoid^-1(0.5) = 0
        hand = sum(any(1 / (1 + math.exp(-x)) > 0.5 for x in row if x != -math.inf) for row in t.logits)
        assert hand == 1
        s = summarize_table(t, 0.5)
        assert s.call_fraction == 0.25 and s.n_intervals == 4
