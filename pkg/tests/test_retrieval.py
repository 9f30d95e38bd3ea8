import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsel import retrieval
from memsel.errors import DimMismatch, EmptySet, InvalidConfig, ZeroVector
from memsel.retrieval import RetrievalConfig, RetrievalVariant

from conftest import make_set, unit_rows


def naive_knn(matrix, query, k):
    """Full-sort oracle: pure-python selection over the same similarities."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    sims = matrix @ q
    order = sorted(range(len(matrix)), key=lambda i: (-sims[i], i))[:k]
    return order, sims


class TestKnn:
    def test_hand_example(self):
        rs = make_set([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)])
        nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.I2TR, k=2)
        assert nb.indices.tolist() == [0, 1]
        assert nb.similarities.tolist() == [1.0, 0.0]

    def test_k_equals_store_size(self, rng):
        rs = make_set(rng.standard_normal((10, 6)))
        nb = retrieval.knn(rng.standard_normal(6), rs, RetrievalVariant.I2TR, k=10)
        assert sorted(nb.indices.tolist()) == list(range(10))
        assert np.all(np.diff(nb.similarities) <= 0)

    def test_tie_breaks_by_lower_index(self):
        rs = make_set([(0.0, 1.0), (1.0, 0.0), (1.0, 0.0), (1.0, 0.0)])
        nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.I2TR, k=3)
        assert nb.indices.tolist() == [1, 2, 3]

    def test_k_clamped_to_store(self, rng):
        rs = make_set(rng.standard_normal((4, 3)))
        nb = retrieval.knn(rng.standard_normal(3), rs, RetrievalVariant.I2TR, k=99)
        assert len(nb.indices) == 4

    def test_variant_selects_scan_column(self):
        # images point along x, texts along y: the scanned column decides
        rs = make_set([(1.0, 0.0), (0.5, 0.1)], [(0.0, 1.0), (0.1, 0.5)])
        img_nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.I2TR, k=1)
        txt_nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.T2TR, k=1)
        assert img_nb.similarities[0] == pytest.approx(1.0)
        assert txt_nb.similarities[0] < 0.25

    def test_matches_full_sort_oracle(self, rng):
        for _ in range(25):
            n = int(rng.integers(1, 60))
            d = int(rng.integers(2, 16))
            k = int(rng.integers(1, n + 1))
            rs = make_set(rng.standard_normal((n, d)))
            q = rng.standard_normal(d)
            nb = retrieval.knn(q, rs, RetrievalVariant.I2IR, k=k)
            want, sims = naive_knn(rs.images64, q, k)
            assert nb.indices.tolist() == want
            assert np.array_equal(nb.similarities, sims[want])

    def test_errors(self, rng):
        rs = make_set(rng.standard_normal((3, 4)))
        with pytest.raises(DimMismatch):
            retrieval.knn(rng.standard_normal(5), rs, RetrievalVariant.I2TR, k=1)
        with pytest.raises(ZeroVector):
            retrieval.knn(np.zeros(4), rs, RetrievalVariant.I2TR, k=1)
        with pytest.raises(InvalidConfig):
            retrieval.knn(rng.standard_normal(4), rs, RetrievalVariant.I2TR, k=0)
        empty = make_set(np.empty((0, 4)))
        with pytest.raises(EmptySet):
            retrieval.knn(rng.standard_normal(4), empty, RetrievalVariant.I2TR, k=1)


class TestWeights:
    def test_proximity_weights_example(self):
        # records at cosines (0.8, 0.6, 0.6) from the query
        rs = make_set([(0.8, 0.6), (0.6, 0.8), (0.6, -0.8)])
        nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.I2TR, k=3)
        assert nb.similarities == pytest.approx([0.8, 0.6, 0.6], abs=1e-6)
        assert nb.weights == pytest.approx([0.4, 0.3, 0.3], abs=1e-6)

    def test_negative_similarities_clipped_then_uniform(self):
        rs = make_set([(-1.0, 0.0), (-0.8, -0.6), (0.0, -1.0)])
        nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.I2TR, k=3)
        assert nb.weights == pytest.approx([1 / 3] * 3)

    def test_weight_floor(self):
        rs = make_set([(1.0, 0.0), (-1.0, 0.0)])
        nb = retrieval.knn((1.0, 0.0), rs, RetrievalVariant.I2TR, k=2, weight_floor=0.5)
        # clipped to (1.0, 0.5) -> weights (2/3, 1/3)
        assert nb.weights == pytest.approx([2 / 3, 1 / 3])

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_simplex_property(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 40))
        d = int(r.integers(2, 12))
        rs = make_set(r.standard_normal((n, d)))
        k = int(r.integers(1, n + 1))
        floor = float(r.choice([0.0, 0.0, 0.1]))
        nb = retrieval.knn(r.standard_normal(d), rs, RetrievalVariant.I2TR, k, floor)
        assert np.all(nb.weights >= 0)
        assert abs(nb.weights.sum() - 1.0) < 1e-6


class TestProxyEmbedding:
    def test_k1_identity(self, rng):
        rs = make_set(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)))
        cfg = RetrievalConfig(k=1, variant=RetrievalVariant.I2TR)
        proxy = retrieval.proxy_embedding(rs.images64[2], rs, cfg)
        assert proxy.neighborhood.indices.tolist() == [2]
        assert proxy.neighborhood.weights.tolist() == [1.0]
        assert proxy.vector == pytest.approx(rs.texts64[2], abs=1e-6)

    def test_identical_neighbors_collapse(self, rng):
        text = unit_rows(rng, 1, 4)[0]
        rs = make_set(rng.standard_normal((4, 4)), np.tile(text, (4, 1)))
        cfg = RetrievalConfig(k=4, variant=RetrievalVariant.I2TR)
        proxy = retrieval.proxy_embedding(rng.standard_normal(4), rs, cfg)
        assert proxy.vector == pytest.approx(rs.texts64[0], abs=1e-6)

    def test_matches_independent_formula(self):
        images = [(0.8, 0.6), (0.6, 0.8), (0.6, -0.8)]
        texts = [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8)]
        rs = make_set(images, texts)
        cfg = RetrievalConfig(k=3, variant=RetrievalVariant.I2TR)
        proxy = retrieval.proxy_embedding((1.0, 0.0), rs, cfg)
        sims = [float(rs.images64[i] @ np.array([1.0, 0.0])) for i in range(3)]
        weights = [s / sum(sims) for s in sims]
        expected = sum(w * rs.texts64[i] for i, w in enumerate(weights))
        expected = expected / np.linalg.norm(expected)
        assert proxy.vector == pytest.approx(expected, abs=1e-6)

    def test_pre_normalization_in_coordinate_hull(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 30))
            d = int(rng.integers(2, 10))
            rs = make_set(rng.standard_normal((n, d)), rng.standard_normal((n, d)))
            k = int(rng.integers(1, n + 1))
            cfg = RetrievalConfig(k=k, variant=RetrievalVariant.I2TR)
            proxy = retrieval.proxy_embedding(rng.standard_normal(d), rs, cfg)
            nbrs = rs.texts64[proxy.neighborhood.indices]
            eps = 1e-12
            assert np.all(proxy.pre_normalized >= nbrs.min(axis=0) - eps)
            assert np.all(proxy.pre_normalized <= nbrs.max(axis=0) + eps)

    def test_proxy_modality_per_variant(self, rng):
        rs = make_set(rng.standard_normal((6, 4)), rng.standard_normal((6, 4)))
        q = rng.standard_normal(4)
        tp = retrieval.proxy_embedding(q, rs, RetrievalConfig(k=2, variant=RetrievalVariant.I2TR))
        ip = retrieval.proxy_embedding(q, rs, RetrievalConfig(k=2, variant=RetrievalVariant.I2IR))
        assert tp.neighborhood.indices.tolist() == ip.neighborhood.indices.tolist()
        hull = rs.texts64[tp.neighborhood.indices]
        assert np.all(tp.pre_normalized <= hull.max(axis=0) + 1e-12)
        hull_img = rs.images64[ip.neighborhood.indices]
        assert np.all(ip.pre_normalized <= hull_img.max(axis=0) + 1e-12)

    def test_unit_norm_output(self, rng):
        rs = make_set(rng.standard_normal((8, 5)), rng.standard_normal((8, 5)))
        cfg = RetrievalConfig(k=4)
        proxy = retrieval.proxy_embedding(rng.standard_normal(5), rs, cfg)
        assert float(np.linalg.norm(proxy.vector)) == pytest.approx(1.0, abs=1e-12)


class TestBatchProxy:
    def test_empty_batch(self, rng):
        rs = make_set(rng.standard_normal((3, 4)))
        assert retrieval.batch_proxy([], rs, RetrievalConfig(k=2)) == []

    def test_batch_equals_sequential(self, rng):
        rs = make_set(rng.standard_normal((20, 6)), rng.standard_normal((20, 6)))
        cfg = RetrievalConfig(k=5)
        queries = [rng.standard_normal(6) for _ in range(12)]
        seq = [retrieval.proxy_embedding(q, rs, cfg) for q in queries]
        for workers in (1, 4):
            batch = retrieval.batch_proxy(queries, rs, cfg, workers=workers)
            for a, b in zip(seq, batch):
                assert np.array_equal(a.vector, b.vector)
                assert a.neighborhood.indices.tolist() == b.neighborhood.indices.tolist()

    def test_per_index_error_isolation(self, rng):
        rs = make_set(rng.standard_normal((5, 4)))
        cfg = RetrievalConfig(k=2)
        queries = [rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(4)]
        out = retrieval.batch_proxy(queries, rs, cfg)
        assert isinstance(out[0], retrieval.ProxyEmbedding)
        assert isinstance(out[1], DimMismatch)
        assert isinstance(out[2], retrieval.ProxyEmbedding)

    def test_determinism_across_runs(self, rng):
        rs = make_set(rng.standard_normal((30, 8)), rng.standard_normal((30, 8)))
        cfg = RetrievalConfig(k=7)
        q = rng.standard_normal(8)
        a = retrieval.proxy_embedding(q, rs, cfg)
        b = retrieval.proxy_embedding(q, rs, cfg)
        assert np.array_equal(a.vector, b.vector)
        assert np.array_equal(a.neighborhood.similarities, b.neighborhood.similarities)
