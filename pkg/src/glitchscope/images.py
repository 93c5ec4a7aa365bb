"""8-bit RGB image buffers and PNG/JPEG loading."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import StorageError, ValidationError


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major RGB pixels, 8 bits per channel, shape (height, width, 3)."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.pixels)
        if arr.dtype != np.uint8:
            raise ValidationError(f"pixels must be uint8, got {arr.dtype}")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"pixels must have shape (h, w, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("image must be at least 1x1")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def same_bytes(self, other: "ImageBuffer") -> bool:
        return self.pixels.shape == other.pixels.shape and \
            bool(np.array_equal(self.pixels, other.pixels))


def load_image(path: str | Path) -> ImageBuffer:
    """Decode a PNG or JPEG file into an 8-bit RGB buffer."""
    path = Path(path)
    if not path.exists():
        raise StorageError(f"image file not found: {path}")
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return ImageBuffer(pixels=np.asarray(rgb, dtype=np.uint8))
    except UnidentifiedImageError as exc:
        raise StorageError(f"cannot decode image {path}: {exc}") from exc


def save_png(image: ImageBuffer, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def png_bytes(image: ImageBuffer) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> ImageBuffer:
    import io

    try:
        with Image.open(io.BytesIO(data)) as img:
            return ImageBuffer(pixels=np.asarray(img.convert("RGB"), dtype=np.uint8))
    except UnidentifiedImageError as exc:
        raise ValidationError(f"cannot decode image payload: {exc}") from exc
