"""Model backends behind the /v1 scoring protocol.

Three backends ship:

* ``stub`` — a hash-based deterministic embedder with no ML dependencies,
  used by the test suite and for smoke-testing deployments.
* ``clip`` — a CLIP checkpoint via HuggingFace transformers; supports both
  modalities.
* ``dinov2`` — a DINOv2 checkpoint; vision-only, so the text endpoints
  report an unsupported-modality error by design (the discrepancy-mining
  pipeline only needs its image embeddings).

All backends return L2-normalized float vectors and are deterministic for a
fixed checkpoint and device (models run in eval mode under no_grad).
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

DEFAULT_CLIP = "openai/clip-vit-base-patch32"
DEFAULT_DINOV2 = "facebook/dinov2-base"


class UnsupportedModalityError(Exception):
    """The loaded model has no tower for the requested modality."""


class ModelBackend(Protocol):
    model_id: str
    dim: int
    supports_text: bool

    def embed_images(self, images: Sequence[Image.Image]) -> np.ndarray: ...

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray: ...


def _l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


class StubBackend:
    """Deterministic hash-expansion embedder for hermetic tests.

    Each input is reduced to SHA-256 of its canonical bytes, then expanded
    in counter mode to ``dim`` floats in [-1, 1] and normalized. No claim of
    semantic structure.
    """

    supports_text = True

    def __init__(self, seed: int = 0, dim: int = 32):
        if dim < 8:
            raise ValueError(f"stub dim must be >= 8, got {dim}")
        self.seed = seed
        self.dim = dim
        self.model_id = f"stub:seed={seed},dim={dim}"

    def _expand(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:".encode() + payload).digest()
        values = []
        counter = 0
        while len(values) < self.dim:
            block = hashlib.sha256(digest + counter.to_bytes(4, "little")).digest()
            for i in range(0, 32, 4):
                word = int.from_bytes(block[i:i + 4], "little")
                values.append(word / 2**31 - 1.0)  # [-1, 1)
            counter += 1
        vec = np.array(values[: self.dim], dtype=np.float64)
        return vec

    def embed_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        rows = [self._expand(b"image:" + img.convert("RGB").tobytes()) for img in images]
        return _l2_normalize_rows(np.stack(rows)).astype(np.float32)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = [self._expand(b"text:" + t.encode("utf-8")) for t in texts]
        return _l2_normalize_rows(np.stack(rows)).astype(np.float32)


class ClipBackend:
    """CLIP image + text towers via transformers."""

    supports_text = True

    def __init__(self, model, processor, model_id: str, dim: int, device: str = "cpu"):
        self.model = model
        self.processor = processor
        self.model_id = model_id
        self.dim = dim
        self.device = device

    @classmethod
    def from_pretrained(cls, model_name: str = DEFAULT_CLIP, device: str = "cpu") -> "ClipBackend":
        import torch
        from transformers import CLIPModel, CLIPProcessor

        model = CLIPModel.from_pretrained(model_name).to(device).eval()
        processor = CLIPProcessor.from_pretrained(model_name)
        torch.set_grad_enabled(False)
        return cls(model=model, processor=processor, model_id=model_name,
                   dim=int(model.config.projection_dim), device=device)

    def embed_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        import torch

        inputs = self.processor(images=list(images), return_tensors="pt").to(self.device)
        with torch.no_grad():
            features = self.model.get_image_features(**inputs)
        features = features / features.norm(dim=-1, keepdim=True)
        return features.cpu().numpy().astype(np.float32)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        import torch

        inputs = self.processor(text=list(texts), return_tensors="pt",
                                padding=True, truncation=True).to(self.device)
        with torch.no_grad():
            features = self.model.get_text_features(**inputs)
        features = features / features.norm(dim=-1, keepdim=True)
        return features.cpu().numpy().astype(np.float32)


class Dinov2Backend:
    """DINOv2 image tower via transformers. Vision-only: text calls raise."""

    supports_text = False

    def __init__(self, model, processor, model_id: str, dim: int, device: str = "cpu"):
        self.model = model
        self.processor = processor
        self.model_id = model_id
        self.dim = dim
        self.device = device

    @classmethod
    def from_pretrained(cls, model_name: str = DEFAULT_DINOV2, device: str = "cpu") -> "Dinov2Backend":
        import torch
        from transformers import AutoImageProcessor, AutoModel

        model = AutoModel.from_pretrained(model_name).to(device).eval()
        processor = AutoImageProcessor.from_pretrained(model_name)
        torch.set_grad_enabled(False)
        return cls(model=model, processor=processor, model_id=model_name,
                   dim=int(model.config.hidden_size), device=device)

    def embed_images(self, images: Sequence[Image.Image]) -> np.ndarray:
        import torch

        inputs = self.processor(images=list(images), return_tensors="pt").to(self.device)
        with torch.no_grad():
            outputs = self.model(**inputs)
        # CLS token of the last hidden state is the standard global feature.
        features = outputs.last_hidden_state[:, 0, :]
        features = features / features.norm(dim=-1, keepdim=True)
        return features.cpu().numpy().astype(np.float32)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise UnsupportedModalityError(
            f"model {self.model_id!r} has no text tower; "
            "text embedding and caption scoring are unsupported")


def load_backend(spec: str, device: str = "cpu") -> ModelBackend:
    """Parse a backend spec: stub:seed=N,dim=D | clip:<name> | dinov2:<name>."""
    kind, _, rest = spec.partition(":")
    if kind == "stub":
        seed, dim = 0, 32
        for part in filter(None, rest.split(",")):
            key, _, value = part.partition("=")
            if key == "seed":
                seed = int(value)
            elif key == "dim":
                dim = int(value)
            else:
                raise ValueError(f"unknown stub option {key!r}")
        return StubBackend(seed=seed, dim=dim)
    if kind == "clip":
        return ClipBackend.from_pretrained(rest or DEFAULT_CLIP, device=device)
    if kind == "dinov2":
        return Dinov2Backend.from_pretrained(rest or DEFAULT_DINOV2, device=device)
    raise ValueError(f"unknown backend spec {spec!r} (expected stub:/clip:/dinov2:)")
