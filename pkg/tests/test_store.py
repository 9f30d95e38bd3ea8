import json
import os
import stat

import numpy as np
import pytest

from memsel import store
from memsel.errors import (
    AmbiguousLoss,
    CountMismatch,
    DimMismatch,
    IoFailure,
    MissingFile,
    NonFiniteValue,
    NotNormalized,
    ParseError,
    UnsupportedVersion,
    ZeroVector,
)

from conftest import make_set, unit_rows


def write_store(root, images, texts, captions, normalized, version=1, dtype="f32le",
                count=None):
    root.mkdir(parents=True, exist_ok=True)
    images = np.asarray(images, dtype="<f4")
    texts = np.asarray(texts, dtype="<f4")
    n, d = images.shape
    manifest = {"version": version, "dim": d, "count": n if count is None else count,
                "normalized": normalized, "dtype": dtype}
    (root / "manifest.json").write_text(json.dumps(manifest))
    (root / "images.f32").write_bytes(images.tobytes())
    (root / "texts.f32").write_bytes(texts.tobytes())
    with (root / "records.jsonl").open("w") as fh:
        for i, cap in enumerate(captions):
            fh.write(json.dumps({"id": f"r{i}", "caption": cap}) + "\n")
    return root


class TestLoadRetrievalSet:
    def test_minimal_consistent_store(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4")
        texts = np.eye(2, 4, k=1, dtype="<f4")
        write_store(tmp_path / "s", images, texts, ["a dog", "a cat"], normalized=True)
        rs = store.load_retrieval_set(tmp_path / "s")
        assert len(rs) == 2
        assert rs.dim == 4
        assert rs.captions == ("a dog", "a cat")
        assert np.array_equal(rs.images, images)

    def test_accepts_manifest_path_directly(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4")
        write_store(tmp_path / "s", images, images, ["x", "y"], normalized=True)
        rs = store.load_retrieval_set(tmp_path / "s" / "manifest.json")
        assert len(rs) == 2

    def test_caption_count_mismatch(self, tmp_path):
        images = np.eye(3, 4, dtype="<f4")
        write_store(tmp_path / "s", images, images, ["a", "b"], normalized=True, count=3)
        with pytest.raises(CountMismatch):
            store.load_retrieval_set(tmp_path / "s")

    def test_missing_files(self, tmp_path):
        with pytest.raises(MissingFile):
            store.load_retrieval_set(tmp_path / "nowhere")
        images = np.eye(2, 4, dtype="<f4")
        root = write_store(tmp_path / "s", images, images, ["a", "b"], normalized=True)
        (root / "texts.f32").unlink()
        with pytest.raises(MissingFile):
            store.load_retrieval_set(root)

    def test_unsupported_version_and_dtype(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4")
        write_store(tmp_path / "v", images, images, ["a", "b"], normalized=True, version=2)
        with pytest.raises(UnsupportedVersion):
            store.load_retrieval_set(tmp_path / "v")
        write_store(tmp_path / "d", images, images, ["a", "b"], normalized=True, dtype="f64le")
        with pytest.raises(UnsupportedVersion):
            store.load_retrieval_set(tmp_path / "d")

    def test_payload_length_mismatch(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4")
        root = write_store(tmp_path / "s", images, images, ["a", "b"], normalized=True)
        (root / "images.f32").write_bytes(images.tobytes()[:-4])
        with pytest.raises(DimMismatch):
            store.load_retrieval_set(root)

    def test_non_finite_rejected(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4")
        bad = images.copy()
        bad[1, 2] = np.nan
        write_store(tmp_path / "s", bad, images, ["a", "b"], normalized=True)
        with pytest.raises(NonFiniteValue):
            store.load_retrieval_set(tmp_path / "s")

    def test_zero_vector_rejected_on_normalize(self, tmp_path):
        images = np.zeros((2, 4), dtype="<f4")
        images[0, 0] = 1.0
        write_store(tmp_path / "s", images, images, ["a", "b"], normalized=False)
        with pytest.raises(ZeroVector):
            store.load_retrieval_set(tmp_path / "s")

    def test_false_normalized_claim_rejected(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4") * 2.0
        write_store(tmp_path / "s", images, images, ["a", "b"], normalized=True)
        with pytest.raises(NotNormalized):
            store.load_retrieval_set(tmp_path / "s")

    def test_unnormalized_store_normalized_at_load(self, tmp_path, rng):
        images = rng.standard_normal((5, 8)) * 3.0
        texts = rng.standard_normal((5, 8)) * 0.2
        write_store(tmp_path / "s", images, texts, [f"c{i}" for i in range(5)],
                    normalized=False)
        rs = store.load_retrieval_set(tmp_path / "s")
        assert rs.manifest.normalized
        norms = np.linalg.norm(rs.images64, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

    def test_unknown_manifest_key_rejected(self, tmp_path):
        images = np.eye(2, 4, dtype="<f4")
        root = write_store(tmp_path / "s", images, images, ["a", "b"], normalized=True)
        doc = json.loads((root / "manifest.json").read_text())
        doc["compression"] = "zstd"
        (root / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(ParseError):
            store.load_retrieval_set(root)


class TestRoundTrip:
    def test_save_then_load_bit_identical(self, tmp_path, rng):
        rs = make_set(rng.standard_normal((7, 6)), rng.standard_normal((7, 6)))
        store.save_retrieval_set(rs, tmp_path / "out")
        again = store.load_retrieval_set(tmp_path / "out")
        assert np.array_equal(rs.images, again.images)
        assert np.array_equal(rs.texts, again.texts)
        assert rs.captions == again.captions
        assert rs.ids == again.ids

    def test_save_load_save_byte_identical(self, tmp_path, rng):
        raw = rng.standard_normal((4, 5)) * 2.0
        write_store(tmp_path / "p", raw, raw * 0.5, [f"c{i}" for i in range(4)],
                    normalized=False)
        first = store.load_retrieval_set(tmp_path / "p")
        store.save_retrieval_set(first, tmp_path / "s1")
        store.save_retrieval_set(store.load_retrieval_set(tmp_path / "s1"), tmp_path / "s2")
        for name in ("manifest.json", "images.f32", "texts.f32", "records.jsonl"):
            assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()

    def test_normalization_idempotent_within_tolerance(self, tmp_path, rng):
        rs = make_set(rng.standard_normal((6, 8)))
        store.save_retrieval_set(rs, tmp_path / "a")
        reloaded = store.load_retrieval_set(tmp_path / "a")
        # already-normalized payload is not touched at all
        assert np.abs(reloaded.images - rs.images).max() == 0.0

    def test_empty_store(self, tmp_path):
        rs = store.RetrievalSet(
            store.StoreManifest(version=1, dim=4, count=0, normalized=True),
            ids=[], captions=[], images=np.empty((0, 4), "<f4"), texts=np.empty((0, 4), "<f4"),
        )
        store.save_retrieval_set(rs, tmp_path / "empty")
        assert (tmp_path / "empty" / "images.f32").stat().st_size == 0
        again = store.load_retrieval_set(tmp_path / "empty")
        assert len(again) == 0

    def test_save_to_unwritable_target(self, tmp_path, rng):
        rs = make_set(rng.standard_normal((2, 4)))
        blocker = tmp_path / "blocked"
        blocker.write_text("a regular file where the store dir should go")
        with pytest.raises(IoFailure):
            store.save_retrieval_set(rs, blocker)
        if os.geteuid() != 0:  # root ignores permission bits
            ro = tmp_path / "ro"
            ro.mkdir()
            os.chmod(ro, stat.S_IRUSR | stat.S_IXUSR)
            try:
                with pytest.raises(IoFailure):
                    store.save_retrieval_set(rs, ro / "sub")
            finally:
                os.chmod(ro, stat.S_IRWXU)

    def test_index_stability(self, rng):
        images = unit_rows(rng, 3, 4)
        texts = unit_rows(rng, 3, 4)
        rs = make_set(images, texts, captions=["one", "two", "three"], ids=["a", "b", "c"])
        rec = rs.record(1)
        assert rec.id == "b"
        assert rec.caption == "two"
        assert np.allclose(rec.image_embedding, images[1] / np.linalg.norm(images[1]), atol=1e-6)


def write_items(path, rows):
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def item_row(item_id="i0", dim=4, **extra):
    vec = [0.0] * dim
    vec[0] = 1.0
    row = {"id": item_id, "image": vec, "prediction_text": "a dog", "prediction": vec}
    row.update(extra)
    return row


class TestLoadEvaluationItems:
    def test_captioning_item(self, tmp_path):
        path = tmp_path / "items.jsonl"
        write_items(path, [item_row(references=["a dog", "the dog"])])
        items = store.load_evaluation_items(path, dim=4)
        assert len(items) == 1
        assert items[0].is_captioning
        assert items[0].references == ("a dog", "the dog")
        assert items[0].correct is None

    def test_ambiguous_loss_neither(self, tmp_path):
        path = tmp_path / "items.jsonl"
        write_items(path, [item_row()])
        with pytest.raises(AmbiguousLoss):
            store.load_evaluation_items(path, dim=4)

    def test_ambiguous_loss_both(self, tmp_path):
        path = tmp_path / "items.jsonl"
        write_items(path, [item_row(references=["a"], correct=True)])
        with pytest.raises(AmbiguousLoss):
            store.load_evaluation_items(path, dim=4)

    def test_order_preserved(self, tmp_path):
        path = tmp_path / "items.jsonl"
        write_items(path, [item_row(f"id{i}", correct=True) for i in range(3)])
        items = store.load_evaluation_items(path, dim=4)
        assert [it.id for it in items] == ["id0", "id1", "id2"]

    def test_dim_mismatch(self, tmp_path):
        path = tmp_path / "items.jsonl"
        write_items(path, [item_row(correct=True)])
        with pytest.raises(DimMismatch):
            store.load_evaluation_items(path, dim=8)

    def test_prediction_must_be_a_candidate(self, tmp_path):
        path = tmp_path / "items.jsonl"
        vec = [1.0, 0.0, 0.0, 0.0]
        row = item_row(correct=True,
                       candidates=[{"text": "a cat", "embedding": vec}])
        write_items(path, [row])
        with pytest.raises(ParseError):
            store.load_evaluation_items(path, dim=4)

    def test_candidates_loaded(self, tmp_path):
        path = tmp_path / "items.jsonl"
        vec = [1.0, 0.0, 0.0, 0.0]
        row = item_row(correct=True,
                       candidates=[{"text": "a dog", "embedding": vec},
                                   {"text": "a cat", "embedding": [0.0, 1.0, 0.0, 0.0]}])
        write_items(path, [row])
        items = store.load_evaluation_items(path, dim=4)
        assert len(items[0].candidates) == 2
        assert items[0].candidate_map()["a cat"][1] == 1.0

    def test_parse_error_carries_line_number(self, tmp_path):
        path = tmp_path / "items.jsonl"
        path.write_text(json.dumps(item_row(correct=True)) + "\n{ not json\n")
        with pytest.raises(ParseError) as err:
            store.load_evaluation_items(path, dim=4)
        assert "line 2" in str(err.value)

    def test_dim_inferred_when_none(self, tmp_path):
        path = tmp_path / "items.jsonl"
        write_items(path, [item_row(correct=True)])
        items = store.load_evaluation_items(path, dim=None)
        assert items[0].prediction_embedding.size == 4

    def test_save_items_round_trip(self, tmp_path):
        path = tmp_path / "items.jsonl"
        vec = [0.5, 0.5, 0.5, 0.5]
        write_items(path, [
            item_row("a", references=["a dog walking"]),
            {"id": "b", "image": None, "prediction_text": "x", "prediction": vec,
             "correct": False},
        ])
        items = store.load_evaluation_items(path, dim=4)
        store.save_evaluation_items(items, tmp_path / "copy.jsonl")
        again = store.load_evaluation_items(tmp_path / "copy.jsonl", dim=4)
        assert [i.id for i in again] == ["a", "b"]
        assert again[1].image_embedding is None
        assert again[1].correct is False
        assert np.allclose(again[0].prediction_embedding, items[0].prediction_embedding)
