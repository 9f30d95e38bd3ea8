import numpy as np
import pytest

from memsel.store import RetrievalSet


def unit_rows(rng, n, d):
    rows = rng.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_set(vectors_img, vectors_txt=None, captions=None, ids=None) -> RetrievalSet:
    """RetrievalSet from raw (unnormalized) row arrays."""
    img = np.asarray(vectors_img, dtype=np.float64)
    txt = img.copy() if vectors_txt is None else np.asarray(vectors_txt, dtype=np.float64)
    n = len(img)
    return RetrievalSet.from_arrays(
        ids=ids or [f"r{i}" for i in range(n)],
        captions=captions or [f"caption {i}" for i in range(n)],
        images=img,
        texts=txt,
        normalized=False,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
