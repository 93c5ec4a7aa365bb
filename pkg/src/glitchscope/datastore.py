"""Dataset manifests, caption selection, and the on-disk vector formats.

Two binary formats are defined here, both little-endian:

Embedding file (magic ``GSEB``)::

    "GSEB" | version u32 (=1) | model_id_len u32 | model_id utf-8
    | dim u32 | count u32
    | id table: count x (len u16 | id utf-8)
    | payload: count x dim float32, row-major

Score-matrix file (magic ``GSSM``)::

    "GSSM" | version u32 (=1)
    | image_count u32 | caption_count u32
    | image-id table: image_count x (len u16 | id utf-8)
    | caption table: caption_count x (len u32 | text utf-8)
    | payload: image_count x caption_count float32, row-major

Both round-trip bit-exactly: the reader returns the same float32 payload
bytes the writer received.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .errors import StorageError, ValidationError

EMBEDDING_MAGIC = b"GSEB"
SCORE_MAGIC = b"GSSM"
FORMAT_VERSION = 1

CaptionPolicy = Literal["longest", "first"]


@dataclass(frozen=True)
class ImageRecord:
    """One image with its caption list. Captions are stored trimmed."""

    id: str
    image_path: str
    captions: tuple[str, ...]

    def __post_init__(self):
        if not self.id:
            raise ValidationError("image record has an empty id")
        trimmed = tuple(c.strip() for c in self.captions)
        if len(trimmed) == 0:
            raise ValidationError(f"record {self.id!r} has no captions")
        for i, c in enumerate(trimmed):
            if not c:
                raise ValidationError(f"record {self.id!r} caption {i} is empty")
        object.__setattr__(self, "captions", trimmed)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    source_name: str = ""

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValidationError(f"duplicate id {rec.id!r} in manifest")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> dict[str, ImageRecord]:
        return {rec.id: rec for rec in self.records}

    def all_captions(self) -> list[str]:
        """Every caption across all records, order preserved, duplicates kept."""
        out: list[str] = []
        for rec in self.records:
            out.extend(rec.captions)
        return out

    def unique_captions(self) -> list[str]:
        """Unique caption texts in first-occurrence order."""
        seen: set[str] = set()
        out: list[str] = []
        for c in self.all_captions():
            if c not in seen:
                seen.add(c)
                out.append(c)
        return out


def select_primary_caption(record: ImageRecord, policy: CaptionPolicy = "longest") -> str:
    """Pick the record's primary caption.

    ``longest`` selects the caption with the most characters (Unicode scalar
    count), ties broken by lowest index; ``first`` selects index 0.
    """
    if policy == "first":
        return record.captions[0]
    if policy == "longest":
        best = record.captions[0]
        for c in record.captions[1:]:
            if len(c) > len(best):
                best = c
        return best
    raise ValidationError(f"unknown caption policy {policy!r}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a JSON-lines manifest file.

    Each non-blank line is an object with keys ``id``, ``image_path`` and
    ``captions``. Relative image paths are resolved against the manifest's
    directory. Parse failures report the 1-based line number.
    """
    path = Path(path)
    if not path.exists():
        raise StorageError(f"manifest file not found: {path}")
    base = path.parent
    records: list[ImageRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid manifest line: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}:{lineno}: manifest line is not an object")
            try:
                rec_id = obj["id"]
                image_path = obj["image_path"]
                captions = obj["captions"]
            except KeyError as exc:
                raise ValidationError(f"{path}:{lineno}: missing key {exc}") from exc
            if not isinstance(rec_id, str) or not isinstance(image_path, str):
                raise ValidationError(f"{path}:{lineno}: id and image_path must be strings")
            if not isinstance(captions, list) or not all(isinstance(c, str) for c in captions):
                raise ValidationError(f"{path}:{lineno}: captions must be an array of strings")
            resolved = Path(image_path)
            if not resolved.is_absolute():
                resolved = base / resolved
            try:
                records.append(ImageRecord(id=rec_id, image_path=str(resolved), captions=tuple(captions)))
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    try:
        return DatasetManifest(records=tuple(records), source_name=path.stem)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(
                {"id": rec.id, "image_path": rec.image_path, "captions": list(rec.captions)},
                ensure_ascii=False,
            ))
            fh.write("\n")


@dataclass(frozen=True)
class EmbeddingStore:
    """Fixed-dimension float32 vectors keyed by string ids."""

    model_id: str
    ids: tuple[str, ...]
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2:
            raise ValidationError(f"vectors must be 2-D, got shape {vecs.shape}")
        if len(self.ids) != vecs.shape[0]:
            raise ValidationError(
                f"id count {len(self.ids)} does not match vector rows {vecs.shape[0]}"
            )
        if vecs.shape[1] < 1:
            raise ValidationError("vector dimension must be >= 1")
        if not np.all(np.isfinite(vecs)):
            raise ValidationError("embedding store contains non-finite components")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("embedding store has duplicate ids")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self) -> dict[str, int]:
        return {i: n for n, i in enumerate(self.ids)}

    def vector(self, id_: str) -> np.ndarray:
        try:
            row = self.ids.index(id_)
        except ValueError:
            raise ValidationError(f"unknown id {id_!r} in embedding store") from None
        return self.vectors[row]


def _encode_id_u16(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError(f"id too long for id table ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise StorageError(f"truncated file while reading {what}")
    return data


def write_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    path = Path(path)
    model_raw = store.model_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(model_raw)))
        fh.write(model_raw)
        fh.write(struct.pack("<II", store.dim, len(store)))
        for id_ in store.ids:
            fh.write(_encode_id_u16(id_))
        fh.write(np.ascontiguousarray(store.vectors, dtype="<f4").tobytes())


def read_embeddings(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"embedding file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBEDDING_MAGIC:
            raise StorageError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise StorageError(f"{path}: unsupported format version {version}")
        (model_len,) = struct.unpack("<I", _read_exact(fh, 4, "model id length"))
        model_id = _read_exact(fh, model_len, "model id").decode("utf-8")
        dim, count = struct.unpack("<II", _read_exact(fh, 8, "dim/count"))
        ids = []
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"id {i} length"))
            ids.append(_read_exact(fh, id_len, f"id {i}").decode("utf-8"))
        payload = _read_exact(fh, 4 * dim * count, "vector payload")
        trailing = fh.read(1)
        if trailing:
            raise StorageError(f"{path}: trailing bytes after payload")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    try:
        return EmbeddingStore(model_id=model_id, ids=tuple(ids), vectors=vectors)
    except ValidationError as exc:
        raise StorageError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ScoreMatrix:
    """Raw similarity logits for (image, caption) pairs, pre-softmax."""

    image_ids: tuple[str, ...]
    caption_texts: tuple[str, ...]
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = np.ascontiguousarray(self.scores, dtype=np.float32)
        if mat.ndim != 2:
            raise ValidationError(f"scores must be 2-D, got shape {mat.shape}")
        if mat.shape != (len(self.image_ids), len(self.caption_texts)):
            raise ValidationError(
                f"score matrix shape {mat.shape} does not match "
                f"{len(self.image_ids)} images x {len(self.caption_texts)} captions"
            )
        if not np.all(np.isfinite(mat)):
            raise ValidationError("score matrix contains non-finite entries")
        mat.setflags(write=False)
        object.__setattr__(self, "scores", mat)
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        object.__setattr__(self, "caption_texts", tuple(self.caption_texts))

    def row(self, image_id: str) -> np.ndarray:
        try:
            idx = self.image_ids.index(image_id)
        except ValueError:
            raise ValidationError(f"unknown image id {image_id!r} in score matrix") from None
        return self.scores[idx]


def write_scores(matrix: ScoreMatrix, path: str | Path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(SCORE_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<II", len(matrix.image_ids), len(matrix.caption_texts)))
        for id_ in matrix.image_ids:
            fh.write(_encode_id_u16(id_))
        for text in matrix.caption_texts:
            raw = text.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(matrix.scores, dtype="<f4").tobytes())


def read_scores(path: str | Path) -> ScoreMatrix:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"score file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SCORE_MAGIC:
            raise StorageError(f"{path}: bad magic {magic!r}, expected {SCORE_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise StorageError(f"{path}: unsupported format version {version}")
        n_images, n_captions = struct.unpack("<II", _read_exact(fh, 8, "counts"))
        image_ids = []
        for i in range(n_images):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"image id {i} length"))
            image_ids.append(_read_exact(fh, id_len, f"image id {i}").decode("utf-8"))
        captions = []
        for i in range(n_captions):
            (text_len,) = struct.unpack("<I", _read_exact(fh, 4, f"caption {i} length"))
            captions.append(_read_exact(fh, text_len, f"caption {i}").decode("utf-8"))
        payload = _read_exact(fh, 4 * n_images * n_captions, "score payload")
        if fh.read(1):
            raise StorageError(f"{path}: trailing bytes after payload")
    scores = np.frombuffer(payload, dtype="<f4").reshape(n_images, n_captions)
    try:
        return ScoreMatrix(image_ids=tuple(image_ids), caption_texts=tuple(captions), scores=scores)
    except ValidationError as exc:
        raise StorageError(f"{path}: {exc}") from exc


def embedding_file_size(model_id: str, ids: Iterable[str], dim: int) -> int:
    """Exact byte size a GSEB file will occupy; useful for sanity checks."""
    ids = list(ids)
    header = 4 + 4 + 4 + len(model_id.encode("utf-8")) + 4 + 4
    id_table = sum(2 + len(i.encode("utf-8")) for i in ids)
    return header + id_table + 4 * dim * len(ids)
