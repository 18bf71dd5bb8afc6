import numpy as np
import pytest

from nmid import dataio, encoder
from nmid.dataio import DatasetManifest, ManifestRecord


def tiny_encoder_config(**overrides) -> encoder.EncoderConfig:
    base = dict(image_height=16, image_width=16, channels=1, patch_size=4,
                embed_dim=8, layers=1, heads=2, head_dim=4, local_window=1, seed=3)
    base.update(overrides)
    return encoder.EncoderConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_encoder_config()


@pytest.fixture(scope="session")
def tiny_params(tiny_cfg):
    return encoder.init_params(tiny_cfg)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """10 classes x 20 images, 64px: the desk-scale mining fixture."""
    root = tmp_path_factory.mktemp("synthetic")
    manifest = dataio.generate_synthetic_dataset(root, 10, 20, 64, seed=7)
    return root, manifest


def all_train(manifest: DatasetManifest) -> DatasetManifest:
    records = [ManifestRecord(r.id, r.path, r.label, "train", r.hardness)
               for r in manifest.records]
    return DatasetManifest(records=records, label_set=list(manifest.label_set))


def random_images(n, h, w, c, seed=0, low=-1.0, high=1.0):
    rng = np.random.default_rng(seed)
    return [rng.uniform(low, high, (h, w, c)) for _ in range(n)]
