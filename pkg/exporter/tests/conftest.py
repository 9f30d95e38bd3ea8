import json

import numpy as np
import pytest
from PIL import Image

COLORS = {
    "red": (220, 30, 30),
    "green": (30, 200, 40),
    "blue": (20, 40, 220),
    "yellow": (230, 220, 30),
    "cyan": (30, 210, 220),
    "magenta": (210, 30, 200),
    "white": (245, 245, 245),
    "orange": (240, 140, 20),
    "purple": (120, 20, 130),
    "brown": (150, 100, 50),
}


def paint(path, rgb, seed):
    """A mostly-solid color tile with mild deterministic texture."""
    rng = np.random.default_rng(seed)
    base = np.tile(np.asarray(rgb, dtype=np.float64), (32, 32, 1))
    noisy = np.clip(base + rng.normal(0, 12, size=base.shape), 0, 255)
    Image.fromarray(noisy.astype(np.uint8), "RGB").save(path)


@pytest.fixture
def toy_collection(tmp_path):
    """Ten colored images with captions naming their colors, plus a manifest."""
    entries = []
    for i, (name, rgb) in enumerate(COLORS.items()):
        image_path = tmp_path / f"{name}.png"
        paint(image_path, rgb, seed=i)
        entries.append({
            "id": f"img-{name}",
            "image": image_path.name,
            "caption": f"a {name} square on a table",
            "correct": True,
        })
    manifest = tmp_path / "manifest.jsonl"
    with manifest.open("w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
    return manifest, entries
