"""Generator for the bundled synthetic mini-dataset.

32 deterministic 64x48 images, each with 5 captions drawn from a shared
vocabulary so caption pools overlap across images. The bundled copy under
``glitchscope/datafiles/mini`` was produced by ``scripts/make_mini_dataset.py``
and is what the hermetic end-to-end tests run against; this module exists so
the fixture can be regenerated bit-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .datastore import DatasetManifest, ImageRecord
from .images import ImageBuffer, save_png
from .rng import stream_for

MINI_COUNT = 32
MINI_CAPTIONS_PER_IMAGE = 5
_WIDTH, _HEIGHT = 64, 48

_SUBJECTS = ["a dog", "a child", "two women", "an old man", "a cyclist",
             "a brown horse", "three friends", "a street vendor"]
_ACTIONS = ["runs", "stands quietly", "jumps", "waits", "plays",
            "walks slowly", "poses for a photo", "rests"]
_PLACES = ["in the park", "on a sandy beach", "near the fountain",
           "beside a red wall", "under tall trees", "at the market",
           "on a wooden bridge", "in shallow water"]
_DETAILS = ["wearing a blue jacket", "holding a striped umbrella",
            "next to a parked bicycle", "with a small kite overhead",
            "carrying a canvas bag", "while birds circle above",
            "against the evening light", "surrounded by fallen leaves"]


def _pick(rng, items):
    return items[rng.next_u64() % len(items)]


def _make_image(index: int, seed: int) -> ImageBuffer:
    rng = stream_for(seed, f"mini-image:{index}")
    h, w = _HEIGHT, _WIDTH
    # Background: a two-color diagonal gradient.
    c0 = np.array([rng.next_u64() % 256 for _ in range(3)], dtype=np.float64)
    c1 = np.array([rng.next_u64() % 256 for _ in range(3)], dtype=np.float64)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    t = (xs / (w - 1) + ys / (h - 1)) / 2.0
    pixels = c0[None, None, :] * (1 - t[:, :, None]) + c1[None, None, :] * t[:, :, None]
    # Two rectangles and one disc in flat colors.
    for _ in range(2):
        color = [rng.next_u64() % 256 for _ in range(3)]
        x0 = rng.next_u64() % (w - 8)
        y0 = rng.next_u64() % (h - 8)
        rw = 6 + rng.next_u64() % 20
        rh = 6 + rng.next_u64() % 16
        pixels[y0:min(h, y0 + rh), x0:min(w, x0 + rw)] = color
    color = np.array([rng.next_u64() % 256 for _ in range(3)], dtype=np.float64)
    cx = 8 + rng.next_u64() % (w - 16)
    cy = 8 + rng.next_u64() % (h - 16)
    radius = 4 + rng.next_u64() % 10
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2
    pixels[mask] = color
    return ImageBuffer(pixels=np.clip(np.rint(pixels), 0, 255).astype(np.uint8))


def _make_captions(index: int, seed: int) -> list[str]:
    rng = stream_for(seed, f"mini-captions:{index}")
    subject = _pick(rng, _SUBJECTS)
    action = _pick(rng, _ACTIONS)
    place = _pick(rng, _PLACES)
    detail = _pick(rng, _DETAILS)
    other_subject = _pick(rng, _SUBJECTS)
    other_place = _pick(rng, _PLACES)
    return [
        f"{subject} {action} {place}",
        f"{subject} {action}",
        f"{subject} {action} {place} {detail}",
        f"{other_subject} {action} {other_place}",
        f"photo of {subject} {place}, {detail}, scene {index}",
    ]


def generate_mini_dataset(out_dir: str | Path, seed: int = 7,
                          count: int = MINI_COUNT) -> DatasetManifest:
    """Write images/<id>.png plus manifest.jsonl under ``out_dir``."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for index in range(count):
            image_id = f"mini_{index:03d}"
            rel_path = f"images/{image_id}.png"
            save_png(_make_image(index, seed), images_dir / f"{image_id}.png")
            captions = _make_captions(index, seed)
            fh.write(json.dumps(
                {"id": image_id, "image_path": rel_path, "captions": captions},
                ensure_ascii=False,
            ))
            fh.write("\n")
            records.append(ImageRecord(id=image_id, image_path=str(images_dir / f"{image_id}.png"),
                                       captions=tuple(captions)))
    return DatasetManifest(records=tuple(records), source_name="mini")


def bundled_manifest_path() -> Path:
    """Path of the mini-dataset manifest shipped inside the package."""
    return Path(__file__).parent / "datafiles" / "mini" / "manifest.jsonl"
