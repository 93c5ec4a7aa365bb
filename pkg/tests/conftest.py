import numpy as np
import pytest

from glitchscope.datastore import EmbeddingStore, load_manifest
from glitchscope.images import ImageBuffer
from glitchscope.mini import bundled_manifest_path
from glitchscope.scorer import ScorerBinding, embed_images
from glitchscope.images import load_image


@pytest.fixture(scope="session")
def mini_manifest_path():
    path = bundled_manifest_path()
    assert path.exists(), "bundled mini dataset is missing"
    return path


@pytest.fixture(scope="session")
def mini_manifest(mini_manifest_path):
    return load_manifest(mini_manifest_path)


@pytest.fixture(scope="session")
def mini_images(mini_manifest):
    return [(rec.id, load_image(rec.image_path)) for rec in mini_manifest.records]


@pytest.fixture(scope="session")
def toy_store_seed1(mini_images):
    return embed_images(ScorerBinding(kind="toy", seed=1, dim=32), mini_images)


@pytest.fixture(scope="session")
def toy_store_seed2(mini_images):
    return embed_images(ScorerBinding(kind="toy", seed=2, dim=32), mini_images)


def make_random_store(n: int, dim: int, seed: int, model_id: str = "random") -> EmbeddingStore:
    rng = np.random.RandomState(seed)
    vectors = rng.normal(size=(n, dim)).astype(np.float32)
    ids = tuple(f"v{i:04d}" for i in range(n))
    return EmbeddingStore(model_id=model_id, ids=ids, vectors=vectors)


def make_random_image(width: int, height: int, seed: int) -> ImageBuffer:
    rng = np.random.RandomState(seed)
    return ImageBuffer(pixels=rng.randint(0, 256, size=(height, width, 3), dtype=np.uint8))
