"""Binary embedding store and evaluation-item ingestion.

A store is one directory with four files:

    manifest.json   {"version": 1, "dim": D, "count": N, "normalized": bool,
                     "dtype": "f32le"}
    images.f32      N x D little-endian float32, row-major, no header
    texts.f32       N x D little-endian float32, row-major, no header
    records.jsonl   line i: {"id": str, "caption": str}, aligned with row i

Row index i is the stable identity used by neighborhood sets: caption and
both embedding rows co-index across the three payload files.

Vectors are kept unit-norm in memory so every downstream cosine reduces to a
dot product. A store saved by this module marks normalized=true and reloads
bit-identically; an unnormalized store is normalized once at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
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

STORE_VERSION = 1
STORE_DTYPE = "f32le"
MANIFEST_NAME = "manifest.json"
IMAGES_NAME = "images.f32"
TEXTS_NAME = "texts.f32"
RECORDS_NAME = "records.jsonl"

# row-norm tolerance for stores that claim normalized=true
NORM_TOLERANCE = 1e-4

_MANIFEST_KEYS = {"version", "dim", "count", "normalized", "dtype"}


@dataclass(frozen=True)
class StoreManifest:
    version: int
    dim: int
    count: int
    normalized: bool
    dtype: str = STORE_DTYPE


@dataclass(frozen=True)
class RetrievalRecord:
    id: str
    image_embedding: np.ndarray
    text_embedding: np.ndarray
    caption: str


class RetrievalSet:
    """Aligned image/text embeddings plus captions; immutable after load."""

    def __init__(self, manifest: StoreManifest, ids, captions, images, texts):
        images = np.asarray(images, dtype="<f4")
        texts = np.asarray(texts, dtype="<f4")
        if images.shape != (manifest.count, manifest.dim):
            raise DimMismatch(
                f"image payload shape {images.shape} != ({manifest.count}, {manifest.dim})"
            )
        if texts.shape != (manifest.count, manifest.dim):
            raise DimMismatch(
                f"text payload shape {texts.shape} != ({manifest.count}, {manifest.dim})"
            )
        if len(ids) != manifest.count or len(captions) != manifest.count:
            raise CountMismatch(
                f"{len(captions)} captions for count={manifest.count}"
            )
        self.manifest = manifest
        self.ids = tuple(str(i) for i in ids)
        self.captions = tuple(str(c) for c in captions)
        self.images = images
        self.texts = texts
        self.images.flags.writeable = False
        self.texts.flags.writeable = False
        # float64 copies used by all similarity math
        self.images64 = self.images.astype(np.float64)
        self.texts64 = self.texts.astype(np.float64)
        self.images64.flags.writeable = False
        self.texts64.flags.writeable = False

    def __len__(self) -> int:
        return self.manifest.count

    @property
    def dim(self) -> int:
        return self.manifest.dim

    def record(self, i: int) -> RetrievalRecord:
        return RetrievalRecord(
            id=self.ids[i],
            image_embedding=self.images[i],
            text_embedding=self.texts[i],
            caption=self.captions[i],
        )

    @classmethod
    def from_arrays(cls, ids, captions, images, texts, normalized: bool) -> "RetrievalSet":
        """Build an in-memory set; unnormalized input is normalized here."""
        images = np.ascontiguousarray(images, dtype="<f4")
        texts = np.ascontiguousarray(texts, dtype="<f4")
        if images.ndim != 2 or texts.ndim != 2 or images.shape != texts.shape:
            raise DimMismatch(f"array shapes differ: {images.shape} vs {texts.shape}")
        count, dim = images.shape
        _check_finite(images, IMAGES_NAME)
        _check_finite(texts, TEXTS_NAME)
        if normalized:
            _check_normalized(images, IMAGES_NAME)
            _check_normalized(texts, TEXTS_NAME)
        else:
            images = _normalize_rows(images, IMAGES_NAME)
            texts = _normalize_rows(texts, TEXTS_NAME)
        manifest = StoreManifest(version=STORE_VERSION, dim=dim, count=count, normalized=True)
        return cls(manifest, ids, captions, images, texts)


@dataclass(frozen=True)
class EvaluationItem:
    """One query: image embedding, predicted text, and its loss source.

    Exactly one of references (captioning) or correct (classification/ITM)
    must be set. candidates, when present, is the finite alternative set and
    always contains prediction_text.
    """

    id: str
    prediction_text: str
    prediction_embedding: np.ndarray
    image_embedding: np.ndarray | None = None
    references: tuple[str, ...] = ()
    correct: bool | None = None
    candidates: tuple[tuple[str, np.ndarray], ...] | None = None

    @property
    def is_captioning(self) -> bool:
        return len(self.references) > 0

    def candidate_map(self) -> dict[str, np.ndarray]:
        if self.candidates is None:
            return {}
        return {text: emb for text, emb in self.candidates}


def _check_finite(arr: np.ndarray, name: str) -> None:
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteValue(f"{name} contains NaN or Inf")


def _check_normalized(arr: np.ndarray, name: str) -> None:
    if arr.size == 0:
        return
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > NORM_TOLERANCE
    if bad.any():
        i = int(np.argmax(bad))
        raise NotNormalized(f"{name} row {i} has norm {norms[i]:.6f}")


def _normalize_rows(arr: np.ndarray, name: str) -> np.ndarray:
    if arr.size == 0:
        return arr.astype("<f4")
    wide = arr.astype(np.float64)
    norms = np.linalg.norm(wide, axis=1)
    if (norms == 0.0).any():
        i = int(np.argmax(norms == 0.0))
        raise ZeroVector(f"{name} row {i} is the zero vector; cannot normalize")
    return (wide / norms[:, None]).astype("<f4")


def normalize_vector(vec, name: str = "vector") -> np.ndarray:
    """Return vec as a unit-norm float64 1-D array."""
    arr = np.asarray(vec, dtype=np.float64).reshape(-1)
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVector(f"{name} is the zero vector")
    return arr / norm


def _read_manifest(path: Path) -> StoreManifest:
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path.name}: {e}") from e
    if not isinstance(raw, dict):
        raise ParseError(f"{path.name}: manifest must be a JSON object")
    unknown = set(raw) - _MANIFEST_KEYS
    if unknown:
        raise ParseError(f"{path.name}: unknown manifest keys {sorted(unknown)}")
    try:
        version = int(raw["version"])
        dim = int(raw["dim"])
        count = int(raw["count"])
        normalized = bool(raw["normalized"])
        dtype = str(raw["dtype"])
    except KeyError as e:
        raise ParseError(f"{path.name}: missing manifest key {e}") from e
    if version != STORE_VERSION:
        raise UnsupportedVersion(f"store version {version}; this loader reads version {STORE_VERSION}")
    if dtype != STORE_DTYPE:
        raise UnsupportedVersion(f"store dtype {dtype!r}; this loader reads {STORE_DTYPE!r}")
    if dim <= 0:
        raise ParseError(f"{path.name}: dim must be positive, got {dim}")
    if count < 0:
        raise ParseError(f"{path.name}: count must be non-negative, got {count}")
    return StoreManifest(version=version, dim=dim, count=count, normalized=normalized, dtype=dtype)


def _read_f32_matrix(path: Path, count: int, dim: int) -> np.ndarray:
    if not path.is_file():
        raise MissingFile(str(path))
    data = path.read_bytes()
    expected = count * dim * 4
    if len(data) != expected:
        raise DimMismatch(
            f"{path.name}: payload is {len(data)} bytes, expected {expected} "
            f"({count} rows x {dim} cols x 4)"
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(count, dim).copy()
    return arr


def _read_records(path: Path, count: int) -> tuple[list[str], list[str]]:
    if not path.is_file():
        raise MissingFile(str(path))
    lines = path.read_text("utf-8").splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if len(lines) != count:
        raise CountMismatch(f"{path.name}: {len(lines)} caption lines for count={count}")
    ids, captions = [], []
    for lineno, line in enumerate(lines, start=1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), line=lineno) from e
        if not isinstance(rec, dict) or "id" not in rec or "caption" not in rec:
            raise ParseError("record needs 'id' and 'caption' fields", line=lineno)
        caption = str(rec["caption"])
        if not caption:
            raise ParseError("caption is empty", line=lineno)
        ids.append(str(rec["id"]))
        captions.append(caption)
    return ids, captions


def resolve_store_dir(path) -> Path:
    """Accept either the store directory or the manifest path itself."""
    p = Path(path)
    if p.is_dir():
        return p
    if p.name == MANIFEST_NAME:
        return p.parent
    return p


def load_retrieval_set(manifest_path) -> RetrievalSet:
    """Load and validate a store; returns an immutable, normalized set."""
    root = resolve_store_dir(manifest_path)
    manifest_file = root / MANIFEST_NAME
    if not manifest_file.is_file():
        raise MissingFile(str(manifest_file))
    manifest = _read_manifest(manifest_file)
    images = _read_f32_matrix(root / IMAGES_NAME, manifest.count, manifest.dim)
    texts = _read_f32_matrix(root / TEXTS_NAME, manifest.count, manifest.dim)
    ids, captions = _read_records(root / RECORDS_NAME, manifest.count)
    _check_finite(images, IMAGES_NAME)
    _check_finite(texts, TEXTS_NAME)
    if manifest.normalized:
        # already unit-norm: keep the payload bits untouched
        _check_normalized(images, IMAGES_NAME)
        _check_normalized(texts, TEXTS_NAME)
    else:
        images = _normalize_rows(images, IMAGES_NAME)
        texts = _normalize_rows(texts, TEXTS_NAME)
        manifest = StoreManifest(
            version=manifest.version, dim=manifest.dim, count=manifest.count,
            normalized=True, dtype=manifest.dtype,
        )
    return RetrievalSet(manifest, ids, captions, images, texts)


def save_retrieval_set(retrieval_set: RetrievalSet, out_dir) -> None:
    """Write the store files so load_retrieval_set inverts them bit-exactly."""
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        m = retrieval_set.manifest
        manifest_doc = {
            "version": m.version,
            "dim": m.dim,
            "count": m.count,
            "normalized": m.normalized,
            "dtype": m.dtype,
        }
        (root / MANIFEST_NAME).write_text(json.dumps(manifest_doc) + "\n", "utf-8")
        (root / IMAGES_NAME).write_bytes(
            np.ascontiguousarray(retrieval_set.images, dtype="<f4").tobytes()
        )
        (root / TEXTS_NAME).write_bytes(
            np.ascontiguousarray(retrieval_set.texts, dtype="<f4").tobytes()
        )
        with (root / RECORDS_NAME).open("w", encoding="utf-8") as fh:
            for rid, caption in zip(retrieval_set.ids, retrieval_set.captions):
                fh.write(json.dumps({"id": rid, "caption": caption}, ensure_ascii=False) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write store to {root}: {e}") from e


def _parse_embedding(raw, dim: int | None, lineno: int, field: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{field} must be a non-empty array of numbers", line=lineno)
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f"{field}: {e}", line=lineno) from e
    if arr.ndim != 1:
        raise ParseError(f"{field} must be a flat array", line=lineno)
    if dim is not None and arr.size != dim:
        raise DimMismatch(f"line {lineno}: {field} has dim {arr.size}, store dim is {dim}")
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"line {lineno}: {field} contains NaN or Inf")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ZeroVector(f"line {lineno}: {field} is the zero vector")
    return arr / norm


def load_evaluation_items(path, dim: int | None) -> list[EvaluationItem]:
    """Parse an items.jsonl file; file order is preserved end to end.

    dim=None infers the dimension from the first embedding and then enforces
    consistency for the remaining rows.
    """
    p = Path(path)
    if not p.is_file():
        raise MissingFile(str(p))
    items: list[EvaluationItem] = []
    for lineno, line in enumerate(p.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), line=lineno) from e
        if not isinstance(rec, dict):
            raise ParseError("item must be a JSON object", line=lineno)
        for field in ("id", "prediction_text", "prediction"):
            if field not in rec:
                raise ParseError(f"missing field {field!r}", line=lineno)
        prediction = _parse_embedding(rec["prediction"], dim, lineno, "prediction")
        if dim is None:
            dim = prediction.size
        image = None
        if rec.get("image") is not None:
            image = _parse_embedding(rec["image"], dim, lineno, "image")
        references = tuple(str(r) for r in rec.get("references") or [])
        correct = rec.get("correct")
        if correct is not None and not isinstance(correct, bool):
            raise ParseError("correct must be a boolean", line=lineno)
        has_refs = len(references) > 0
        if has_refs == (correct is not None):
            raise AmbiguousLoss(
                f"line {lineno}: need exactly one of non-empty references or correct"
            )
        candidates = None
        if rec.get("candidates") is not None:
            raw_cands = rec["candidates"]
            if not isinstance(raw_cands, list) or not raw_cands:
                raise ParseError("candidates must be a non-empty array", line=lineno)
            parsed = []
            for j, cand in enumerate(raw_cands):
                if not isinstance(cand, dict) or "text" not in cand or "embedding" not in cand:
                    raise ParseError(f"candidate {j} needs 'text' and 'embedding'", line=lineno)
                parsed.append(
                    (str(cand["text"]), _parse_embedding(cand["embedding"], dim, lineno, f"candidates[{j}]"))
                )
            if not any(text == str(rec["prediction_text"]) for text, _ in parsed):
                raise ParseError("prediction_text is not among candidate texts", line=lineno)
            candidates = tuple(parsed)
        items.append(
            EvaluationItem(
                id=str(rec["id"]),
                prediction_text=str(rec["prediction_text"]),
                prediction_embedding=prediction,
                image_embedding=image,
                references=references,
                correct=correct,
                candidates=candidates,
            )
        )
    return items


def save_evaluation_items(items, path) -> None:
    """Write items back to JSONL in the schema load_evaluation_items reads."""
    p = Path(path)
    try:
        with p.open("w", encoding="utf-8") as fh:
            for item in items:
                doc: dict = {
                    "id": item.id,
                    "image": None if item.image_embedding is None else [float(x) for x in item.image_embedding],
                    "prediction_text": item.prediction_text,
                    "prediction": [float(x) for x in item.prediction_embedding],
                }
                if item.references:
                    doc["references"] = list(item.references)
                if item.correct is not None:
                    doc["correct"] = item.correct
                if item.candidates is not None:
                    doc["candidates"] = [
                        {"text": text, "embedding": [float(x) for x in emb]}
                        for text, emb in item.candidates
                    ]
                fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write items to {p}: {e}") from e
