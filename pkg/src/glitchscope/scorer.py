"""Pluggable embedding/scoring backends.

Three binding kinds supply vectors to the pipeline:

* ``toy`` — a deterministic non-ML scorer for hermetic runs. Images become a
  280-feature vector (16x16 adaptive-average-pooled gray intensities plus
  8-bin per-channel histograms), texts become 1024 hashed token counts; both
  are projected by a seed-derived Gaussian matrix and L2-normalized. It makes
  no claim of exhibiting any real model's faults.
* ``file`` — precomputed embedding stores and score matrices on disk.
* ``remote`` — a JSON-over-HTTP scoring service speaking the /v1 protocol
  (see README). Requests carry a SHA-256 content digest so retries are
  idempotent on the server side.

Binding strings: ``toy:seed=1,dim=64``, ``remote:http://host:port``,
``file:<store.gseb>`` or ``file:image=<p>,text=<p>,scores=<p>``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .datastore import EmbeddingStore, ScoreMatrix, read_embeddings, read_scores
from .errors import RemoteScorerError, ValidationError
from .images import ImageBuffer, png_bytes
from .rng import fnv1a64, stream_for
from .validation import check_nonempty_text

_TEXT_BUCKETS = 1024
_IMAGE_FEATURES = 280  # 16*16 pooled intensities + 3*8 histogram bins
_POOL_GRID = 16
_HIST_BINS = 8


@lru_cache(maxsize=32)
def _projection(seed: int, label: str, rows: int, cols: int) -> np.ndarray:
    # Drawing rows*cols portable normals is the expensive part of the toy
    # backends; the matrix is pure in its arguments, so cache it read-only.
    rng = stream_for(seed, label)
    flat = np.array(rng.normals(rows * cols), dtype=np.float64)
    matrix = flat.reshape(rows, cols)
    matrix.setflags(write=False)
    return matrix


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        # Degenerate projections are practically unreachable; keep the output
        # a valid unit vector instead of propagating zeros.
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / norm


class ToyImageEmbedder(BaseEstimator):
    """Deterministic image featurizer + seeded Gaussian projection."""

    def __init__(self, seed: int = 0, dim: int = 64):
        self.seed = seed
        self.dim = dim

    def fit(self, X=None, y=None) -> "ToyImageEmbedder":
        if self.dim < 8:
            raise ValidationError(f"toy dim must be >= 8, got {self.dim}")
        self.projection_ = _projection(self.seed, "toy-image-projection",
                                       self.dim, _IMAGE_FEATURES)
        return self

    def features(self, image: ImageBuffer) -> np.ndarray:
        pixels = image.pixels.astype(np.float64)
        gray = (0.299 * pixels[:, :, 0] + 0.587 * pixels[:, :, 1]
                + 0.114 * pixels[:, :, 2]) / 255.0
        h, w = gray.shape
        pooled = np.empty((_POOL_GRID, _POOL_GRID), dtype=np.float64)
        for i in range(_POOL_GRID):
            r0, r1 = (i * h) // _POOL_GRID, -(-((i + 1) * h) // _POOL_GRID)
            for j in range(_POOL_GRID):
                c0, c1 = (j * w) // _POOL_GRID, -(-((j + 1) * w) // _POOL_GRID)
                pooled[i, j] = gray[r0:r1, c0:c1].mean()
        hists = []
        n_pixels = h * w
        for c in range(3):
            bins = np.bincount((image.pixels[:, :, c] >> 5).ravel(), minlength=_HIST_BINS)
            hists.append(bins.astype(np.float64) / n_pixels)
        return np.concatenate([pooled.ravel()] + hists)

    def transform(self, items: Sequence[tuple[str, ImageBuffer]]) -> np.ndarray:
        if not hasattr(self, "projection_"):
            self.fit()
        if len(items) == 0:
            raise ValidationError("image batch is empty")
        out = np.empty((len(items), self.dim), dtype=np.float32)
        for row, (_, image) in enumerate(items):
            vec = self.projection_ @ self.features(image)
            out[row] = _l2_normalize(vec).astype(np.float32)
        return out


class ToyTextEmbedder(BaseEstimator):
    """Hashed bag-of-words featurizer + seeded Gaussian projection."""

    def __init__(self, seed: int = 0, dim: int = 64):
        self.seed = seed
        self.dim = dim

    def fit(self, X=None, y=None) -> "ToyTextEmbedder":
        if self.dim < 8:
            raise ValidationError(f"toy dim must be >= 8, got {self.dim}")
        self.projection_ = _projection(self.seed, "toy-text-projection",
                                       self.dim, _TEXT_BUCKETS)
        return self

    def features(self, text: str) -> np.ndarray:
        counts = np.zeros(_TEXT_BUCKETS, dtype=np.float64)
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        if not tokens:
            tokens = [""]
        for tok in tokens:
            counts[fnv1a64(tok.encode("utf-8")) % _TEXT_BUCKETS] += 1.0
        return counts

    def transform(self, texts: Sequence[str]) -> np.ndarray:
        if not hasattr(self, "projection_"):
            self.fit()
        check_nonempty_text(texts)
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            vec = self.projection_ @ self.features(text)
            out[row] = _l2_normalize(vec).astype(np.float32)
        return out


@dataclass(frozen=True)
class ScorerBinding:
    """Where embeddings and logits come from: toy, file, or remote."""

    kind: str  # "toy" | "file" | "remote"
    seed: int = 0
    dim: int = 64
    image_store_path: str | None = None
    text_store_path: str | None = None
    scores_path: str | None = None
    base_url: str | None = None
    timeout: float = 30.0
    retries: int = 3


def parse_binding(spec: str) -> ScorerBinding:
    """Parse a CLI binding string (see module docstring for the grammar)."""
    kind, _, rest = spec.partition(":")
    if kind == "toy":
        seed, dim = 0, 64
        for part in filter(None, rest.split(",")):
            key, _, value = part.partition("=")
            if key == "seed":
                seed = int(value)
            elif key == "dim":
                dim = int(value)
            else:
                raise ValidationError(f"unknown toy binding option {key!r}")
        if dim < 8:
            raise ValidationError(f"toy dim must be >= 8, got {dim}")
        return ScorerBinding(kind="toy", seed=seed, dim=dim)
    if kind == "remote":
        if not rest.startswith(("http://", "https://")):
            raise ValidationError(f"remote binding needs an http(s) URL, got {rest!r}")
        return ScorerBinding(kind="remote", base_url=rest.rstrip("/"))
    if kind == "file":
        if "=" not in rest:
            if not rest:
                raise ValidationError("file binding needs a path")
            return ScorerBinding(kind="file", image_store_path=rest, text_store_path=rest)
        paths: dict[str, str] = {}
        for part in filter(None, rest.split(",")):
            key, _, value = part.partition("=")
            if key not in ("image", "text", "scores") or not value:
                raise ValidationError(f"bad file binding component {part!r}")
            paths[key] = value
        return ScorerBinding(
            kind="file",
            image_store_path=paths.get("image"),
            text_store_path=paths.get("text"),
            scores_path=paths.get("scores"),
        )
    raise ValidationError(f"unknown scorer binding {spec!r} (expected toy:/file:/remote:)")


class RemoteScorerClient:
    """Minimal client for the /v1 scoring protocol with idempotent retries."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.2):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        digest = hashlib.sha256(body).hexdigest()
        headers = {
            "Content-Type": "application/json",
            "X-Content-Digest": digest,
        }
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.base_url + path, content=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise RemoteScorerError(
                            f"{path}: malformed JSON response: {exc}") from exc
                if resp.status_code < 500:
                    raise RemoteScorerError(
                        f"{path}: server rejected request ({resp.status_code}): {resp.text[:200]}")
                last_error = RemoteScorerError(
                    f"{path}: server error {resp.status_code}: {resp.text[:200]}")
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise RemoteScorerError(f"{path}: giving up after {self.retries + 1} attempts: {last_error}")

    def _get(self, path: str) -> dict:
        import httpx

        try:
            resp = self._client.get(self.base_url + path)
        except httpx.HTTPError as exc:
            raise RemoteScorerError(f"{path}: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteScorerError(f"{path}: status {resp.status_code}")
        return resp.json()

    def info(self) -> dict:
        return self._get("/v1/info")

    def embed_images(self, items: Sequence[tuple[str, ImageBuffer]]) -> EmbeddingStore:
        payload = {"items": [
            {"id": id_, "png_b64": base64.b64encode(png_bytes(img)).decode("ascii")}
            for id_, img in items
        ]}
        data = self._post("/v1/embed_image", payload)
        try:
            dim = int(data["dim"])
            by_id = {item["id"]: item["vec"] for item in data["items"]}
            vectors = np.array([by_id[id_] for id_, _ in items], dtype=np.float32)
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteScorerError(f"/v1/embed_image: malformed payload: {exc}") from exc
        if vectors.shape != (len(items), dim):
            raise RemoteScorerError(
                f"/v1/embed_image: expected {(len(items), dim)} vectors, got {vectors.shape}")
        model_id = str(self.info().get("model_id", self.base_url))
        return EmbeddingStore(model_id=model_id, ids=tuple(i for i, _ in items), vectors=vectors)

    def embed_texts(self, texts: Sequence[str]) -> EmbeddingStore:
        data = self._post("/v1/embed_text", {"texts": list(texts)})
        try:
            dim = int(data["dim"])
            vectors = np.array(data["vecs"], dtype=np.float32)
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteScorerError(f"/v1/embed_text: malformed payload: {exc}") from exc
        if vectors.shape != (len(texts), dim):
            raise RemoteScorerError(
                f"/v1/embed_text: expected {(len(texts), dim)} vectors, got {vectors.shape}")
        model_id = str(self.info().get("model_id", self.base_url))
        return EmbeddingStore(model_id=model_id, ids=tuple(texts), vectors=vectors)

    def score(self, image: ImageBuffer, captions: Sequence[str]) -> np.ndarray:
        payload = {
            "png_b64": base64.b64encode(png_bytes(image)).decode("ascii"),
            "captions": list(captions),
        }
        data = self._post("/v1/score", payload)
        try:
            logits = np.array(data["logits"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise RemoteScorerError(f"/v1/score: malformed payload: {exc}") from exc
        if logits.shape != (len(captions),):
            raise RemoteScorerError(
                f"/v1/score: expected {len(captions)} logits, got shape {logits.shape}")
        return logits


def _cosine_rows(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    m = matrix.astype(np.float64)
    v = vector.astype(np.float64)
    norms = np.linalg.norm(m, axis=1) * np.linalg.norm(v)
    if np.any(norms == 0.0):
        raise ValidationError("zero vector encountered while computing cosine logits")
    return (m @ v) / norms


def embed_images(binding: ScorerBinding, images: Sequence[tuple[str, ImageBuffer]]) -> EmbeddingStore:
    """One embedding vector per (id, image), in input order."""
    if len(images) == 0:
        raise ValidationError("image batch is empty")
    if binding.kind == "toy":
        embedder = ToyImageEmbedder(seed=binding.seed, dim=binding.dim).fit()
        vectors = embedder.transform(images)
        model_id = f"toy-image:seed={binding.seed},dim={binding.dim}"
        return EmbeddingStore(model_id=model_id, ids=tuple(i for i, _ in images), vectors=vectors)
    if binding.kind == "file":
        if binding.image_store_path is None:
            raise ValidationError("file binding has no image store path")
        store = read_embeddings(binding.image_store_path)
        index = store.index_of()
        missing = [id_ for id_, _ in images if id_ not in index]
        if missing:
            raise ValidationError(f"file store is missing ids: {missing[:5]}")
        rows = np.array([store.vectors[index[id_]] for id_, _ in images], dtype=np.float32)
        return EmbeddingStore(model_id=store.model_id, ids=tuple(i for i, _ in images), vectors=rows)
    if binding.kind == "remote":
        client = RemoteScorerClient(binding.base_url or "", binding.timeout, binding.retries)
        try:
            return client.embed_images(images)
        finally:
            client.close()
    raise ValidationError(f"unknown binding kind {binding.kind!r}")


def embed_texts(binding: ScorerBinding, texts: Sequence[str]) -> EmbeddingStore:
    """One embedding vector per text; ids are the texts themselves."""
    check_nonempty_text(texts)
    if len(set(texts)) != len(texts):
        raise ValidationError("duplicate texts in embed_texts batch")
    if binding.kind == "toy":
        embedder = ToyTextEmbedder(seed=binding.seed, dim=binding.dim).fit()
        vectors = embedder.transform(texts)
        model_id = f"toy-text:seed={binding.seed},dim={binding.dim}"
        return EmbeddingStore(model_id=model_id, ids=tuple(texts), vectors=vectors)
    if binding.kind == "file":
        if binding.text_store_path is None:
            raise ValidationError("file binding has no text store path")
        store = read_embeddings(binding.text_store_path)
        index = store.index_of()
        missing = [t for t in texts if t not in index]
        if missing:
            raise ValidationError(f"text store is missing captions: {missing[:3]}")
        rows = np.array([store.vectors[index[t]] for t in texts], dtype=np.float32)
        return EmbeddingStore(model_id=store.model_id, ids=tuple(texts), vectors=rows)
    if binding.kind == "remote":
        client = RemoteScorerClient(binding.base_url or "", binding.timeout, binding.retries)
        try:
            return client.embed_texts(texts)
        finally:
            client.close()
    raise ValidationError(f"unknown binding kind {binding.kind!r}")


def score_image_captions(binding: ScorerBinding, image: tuple[str, ImageBuffer],
                         captions: Sequence[str]) -> np.ndarray:
    """Raw cosine logits of one image against each caption."""
    check_nonempty_text(captions, "captions")
    image_id, buffer = image
    if binding.kind == "toy":
        img_vec = embed_images(binding, [image]).vectors[0]
        txt_store = embed_texts(binding, list(dict.fromkeys(captions)))
        txt_index = txt_store.index_of()
        txt_vecs = np.array([txt_store.vectors[txt_index[c]] for c in captions])
        return _cosine_rows(txt_vecs, img_vec)
    if binding.kind == "file":
        if binding.scores_path is not None:
            matrix: ScoreMatrix = read_scores(binding.scores_path)
            row = matrix.row(image_id)
            col_of = {c: i for i, c in enumerate(matrix.caption_texts)}
            missing = [c for c in captions if c not in col_of]
            if missing:
                raise ValidationError(f"score matrix is missing captions: {missing[:3]}")
            return np.array([row[col_of[c]] for c in captions], dtype=np.float64)
        if binding.image_store_path and binding.text_store_path:
            img_vec = embed_images(binding, [image]).vectors[0]
            txt_vecs = embed_texts(binding, list(captions)).vectors \
                if len(set(captions)) == len(captions) else None
            if txt_vecs is None:
                unique = list(dict.fromkeys(captions))
                store = embed_texts(binding, unique)
                idx = store.index_of()
                txt_vecs = np.array([store.vectors[idx[c]] for c in captions])
            return _cosine_rows(np.asarray(txt_vecs), img_vec)
        raise ValidationError("file binding cannot score: needs scores= or image=+text= paths")
    if binding.kind == "remote":
        client = RemoteScorerClient(binding.base_url or "", binding.timeout, binding.retries)
        try:
            return client.score(buffer, captions)
        finally:
            client.close()
    raise ValidationError(f"unknown binding kind {binding.kind!r}")
