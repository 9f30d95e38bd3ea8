"""Export image/caption collections into the engine's store format.

Input manifest (JSONL), one entry per image-caption pair:

    {"id": str, "image": "photo.png", "caption": str,
     "correct": bool,            // optional: classification/ITM ground truth
     "references": [str, ...]}   // optional: captioning references

Every decodable entry becomes one store record; entries carrying `correct`
or `references` additionally become evaluation items whose prediction text
is the caption. Relative image paths are resolved against the manifest's
directory. Output layout matches the engine's store contract exactly:
manifest.json + images.f32 + texts.f32 + records.jsonl (+ items.jsonl).
All vectors are L2-normalized before writing and the manifest is marked
normalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import get_encoder
from .errors import ExportError, ImageDecodeFailure, ManifestError

STORE_VERSION = 1
STORE_DTYPE = "f32le"


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image: Path
    caption: str
    correct: bool | None = None
    references: tuple[str, ...] = ()

    @property
    def wants_item(self) -> bool:
        return self.correct is not None or len(self.references) > 0


@dataclass
class ExportJob:
    model: str
    entries: list[ManifestEntry]
    out_dir: Path
    batch_size: int = 32


@dataclass
class ExportReport:
    exported: int = 0
    items: int = 0
    skipped: list[str] = field(default_factory=list)


def load_manifest(path) -> list[ManifestEntry]:
    p = Path(path)
    if not p.is_file():
        raise ManifestError(f"manifest not found: {p}")
    base = p.parent
    entries = []
    for lineno, line in enumerate(p.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"line {lineno}: {e}") from e
        for required in ("id", "image", "caption"):
            if required not in rec:
                raise ManifestError(f"line {lineno}: missing field {required!r}")
        if rec.get("correct") is not None and not isinstance(rec["correct"], bool):
            raise ManifestError(f"line {lineno}: correct must be a boolean")
        image = Path(rec["image"])
        if not image.is_absolute():
            image = base / image
        entries.append(
            ManifestEntry(
                id=str(rec["id"]),
                image=image,
                caption=str(rec["caption"]),
                correct=rec.get("correct"),
                references=tuple(str(r) for r in rec.get("references") or []),
            )
        )
    return entries


def _batched(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def _renormalize_f32(rows: np.ndarray) -> np.ndarray:
    """float32 rows with unit norms (within the engine's load tolerance)."""
    wide = np.asarray(rows, dtype=np.float64)
    wide = wide / np.linalg.norm(wide, axis=1, keepdims=True)
    return wide.astype("<f4")


def export_store(job: ExportJob) -> ExportReport:
    """Encode every manifest entry and write the store (+ items) files.

    Undecodable images are skipped and reported, never silently dropped.
    """
    encoder = get_encoder(job.model)
    report = ExportReport()

    kept: list[ManifestEntry] = []
    image_rows: list[np.ndarray] = []
    for batch in _batched(job.entries, max(1, job.batch_size)):
        for entry in batch:
            try:
                row = encoder.encode_images([entry.image])[0]
            except ImageDecodeFailure as e:
                report.skipped.append(f"{entry.id}: {e}")
                continue
            kept.append(entry)
            image_rows.append(row)
    if not kept:
        raise ExportError("no manifest entry survived image decoding")

    text_rows = []
    for batch in _batched([e.caption for e in kept], max(1, job.batch_size)):
        text_rows.append(encoder.encode_texts(batch))
    images = _renormalize_f32(np.stack(image_rows))
    texts = _renormalize_f32(np.concatenate(text_rows))

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": STORE_VERSION,
        "dim": encoder.dim,
        "count": len(kept),
        "normalized": True,
        "dtype": STORE_DTYPE,
    }
    (out / "manifest.json").write_text(json.dumps(manifest) + "\n", "utf-8")
    (out / "images.f32").write_bytes(np.ascontiguousarray(images).tobytes())
    (out / "texts.f32").write_bytes(np.ascontiguousarray(texts).tobytes())
    with (out / "records.jsonl").open("w", encoding="utf-8") as fh:
        for entry in kept:
            fh.write(json.dumps({"id": entry.id, "caption": entry.caption},
                                ensure_ascii=False) + "\n")
    report.exported = len(kept)

    item_rows = [(e, img, txt) for e, img, txt in zip(kept, images, texts) if e.wants_item]
    if item_rows:
        with (out / "items.jsonl").open("w", encoding="utf-8") as fh:
            for entry, img, txt in item_rows:
                doc = {
                    "id": entry.id,
                    "image": [float(x) for x in img],
                    "prediction_text": entry.caption,
                    "prediction": [float(x) for x in txt],
                }
                if entry.references:
                    doc["references"] = list(entry.references)
                else:
                    doc["correct"] = entry.correct
                fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
        report.items = len(item_rows)
    return report


def embed_negatives(items_path, negatives_path, model: str, out_path,
                    batch_size: int = 32) -> ExportReport:
    """Attach embedded negative captions to items as candidate sets.

    Reads the engine's items.jsonl and negatives.jsonl, embeds each item's
    negative texts, and writes items whose candidates are the prediction
    itself plus the embedded negatives (the prediction must be a candidate
    for the items file to load). Items with no negatives pass through
    unchanged and are counted as skipped.
    """
    encoder = get_encoder(model)
    report = ExportReport()

    negatives: dict[str, list[str]] = {}
    neg_file = Path(negatives_path)
    if not neg_file.is_file():
        raise ManifestError(f"negatives file not found: {neg_file}")
    for lineno, line in enumerate(neg_file.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        negatives[str(rec["id"])] = [str(t) for t in rec.get("negatives", [])]

    items_file = Path(items_path)
    if not items_file.is_file():
        raise ManifestError(f"items file not found: {items_file}")
    out_lines = []
    for lineno, line in enumerate(items_file.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        item = json.loads(line)
        prediction = np.asarray(item["prediction"], dtype=np.float64)
        if prediction.size != encoder.dim:
            raise ExportError(
                f"line {lineno}: item dim {prediction.size} != encoder dim {encoder.dim}"
            )
        texts = [t for t in negatives.get(str(item["id"]), [])
                 if t != item["prediction_text"]]
        if not texts:
            report.skipped.append(str(item["id"]))
            out_lines.append(line)
            continue
        rows = []
        for batch in _batched(texts, max(1, batch_size)):
            rows.append(encoder.encode_texts(batch))
        embedded = np.concatenate(rows)
        candidates = [{"text": item["prediction_text"], "embedding": item["prediction"]}]
        candidates += [
            {"text": text, "embedding": [float(x) for x in row]}
            for text, row in zip(texts, embedded)
        ]
        item["candidates"] = candidates
        out_lines.append(json.dumps(item, ensure_ascii=False))
        report.exported += 1
    Path(out_path).write_text("\n".join(out_lines) + ("\n" if out_lines else ""), "utf-8")
    report.items = report.exported
    return report
