"""Dual image/text encoders behind one small interface.

Identifiers:

    toy-color            deterministic offline encoder (default dim 64)
    toy-color:<dim>      same, explicit output dimension
    hf-clip:<model_id>   CLIP-style checkpoint via transformers (optional
                         dependency; weights must be available locally or
                         downloadable)

The toy-color encoder maps images and captions into a shared feature layout
(bias + color statistics + hashed words) followed by one fixed random
projection, so images and the captions naming their colors land close
together. It exists so the exporter and the downstream engine can be
exercised end to end without model weights; it is not a learned model.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

from .errors import ImageDecodeFailure, ModelLoadFailure

_COLOR_ANCHORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "gray": (0.5, 0.5, 0.5),
    "grey": (0.5, 0.5, 0.5),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 0.5),
    "pink": (1.0, 0.75, 0.8),
    "brown": (0.6, 0.4, 0.2),
}

_BOW_BUCKETS = 16
_RAW_DIM = 1 + 15 + _BOW_BUCKETS  # bias + color block + hashed words
_BIAS_WEIGHT = 0.25
_BOW_WEIGHT = 0.3
_PROJECTION_SEED = 1902


def _tokens(text: str) -> list[str]:
    word, out = "", []
    for ch in text.lower():
        if ch.isalnum():
            word += ch
        else:
            if word:
                out.append(word)
            word = ""
    if word:
        out.append(word)
    return out


def _bow_bucket(token: str) -> int:
    return int.from_bytes(hashlib.md5(token.encode()).digest()[:4], "big") % _BOW_BUCKETS


class ToyColorEncoder:
    """Deterministic color-anchored dual encoder (no weights, no network)."""

    def __init__(self, dim: int = 64):
        if dim < 4:
            raise ModelLoadFailure(f"toy-color dim must be >= 4, got {dim}")
        self.dim = dim
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._projection = rng.standard_normal((_RAW_DIM, dim)) / np.sqrt(_RAW_DIM)

    def _project(self, raw: np.ndarray) -> np.ndarray:
        out = raw @ self._projection
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return out / norms

    def encode_images(self, paths) -> np.ndarray:
        raws = []
        for path in paths:
            try:
                with Image.open(path) as img:
                    small = np.asarray(img.convert("RGB").resize((8, 8)), dtype=np.float64)
            except OSError as e:
                raise ImageDecodeFailure(f"{path}: {e}") from e
            small /= 255.0
            color = [small.mean(axis=(0, 1))]
            for ys in (slice(0, 4), slice(4, 8)):
                for xs in (slice(0, 4), slice(4, 8)):
                    color.append(small[ys, xs].mean(axis=(0, 1)))
            raw = np.zeros(_RAW_DIM)
            raw[0] = _BIAS_WEIGHT
            raw[1:16] = np.concatenate(color)
            raws.append(raw)
        return self._project(np.stack(raws))

    def encode_texts(self, texts) -> np.ndarray:
        raws = []
        for text in texts:
            anchors = []
            bow = np.zeros(_BOW_BUCKETS)
            for token in _tokens(text):
                if token in _COLOR_ANCHORS:
                    anchors.append(_COLOR_ANCHORS[token])
                else:
                    bow[_bow_bucket(token)] += 1.0
            raw = np.zeros(_RAW_DIM)
            raw[0] = _BIAS_WEIGHT
            if anchors:
                mean_color = np.mean(np.asarray(anchors), axis=0)
                raw[1:16] = np.tile(mean_color, 5)  # global + four quadrants
            if bow.any():
                raw[16:] = _BOW_WEIGHT * bow / np.linalg.norm(bow)
            raws.append(raw)
        return self._project(np.stack(raws))


class HfClipEncoder:
    """CLIP-style dual encoder through transformers (optional extra)."""

    def __init__(self, model_id: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise ModelLoadFailure(f"transformers/torch unavailable: {e}") from e
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as e:  # weights missing, bad id, network down
            raise ModelLoadFailure(f"cannot load {model_id}: {e}") from e
        self._model.eval()
        self._torch = torch
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, paths) -> np.ndarray:
        images = []
        for path in paths:
            try:
                with Image.open(path) as img:
                    images.append(img.convert("RGB").copy())
            except OSError as e:
                raise ImageDecodeFailure(f"{path}: {e}") from e
        inputs = self._processor(images=images, return_tensors="pt")
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        out = feats.numpy().astype(np.float64)
        return out / np.linalg.norm(out, axis=1, keepdims=True)

    def encode_texts(self, texts) -> np.ndarray:
        inputs = self._processor(text=list(texts), return_tensors="pt", padding=True,
                                 truncation=True)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        out = feats.numpy().astype(np.float64)
        return out / np.linalg.norm(out, axis=1, keepdims=True)


def get_encoder(identifier: str):
    if identifier == "toy-color":
        return ToyColorEncoder()
    if identifier.startswith("toy-color:"):
        try:
            dim = int(identifier.split(":", 1)[1])
        except ValueError as e:
            raise ModelLoadFailure(f"bad toy-color dim in {identifier!r}") from e
        return ToyColorEncoder(dim)
    if identifier.startswith("hf-clip:"):
        return HfClipEncoder(identifier.split(":", 1)[1])
    raise ModelLoadFailure(f"unknown model identifier {identifier!r}")
