import numpy as np
import pytest

from src.models.dataset import GlyphSpec, NoisyDataset
from src.models.experiment import ExperimentConfig
from src.models.network import Network
from src.services.data import generate_glyphs, inject_symmetric
from src.services.nn import build_network


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def glyphs() -> NoisyDataset:
    return generate_glyphs(GlyphSpec(num_classes=4, samples_per_class=10, image_size=16), seed=3)


@pytest.fixture
def noisy_glyphs(glyphs: NoisyDataset) -> NoisyDataset:
    return inject_symmetric(glyphs, 0.5, seed=5)


@pytest.fixture
def small_net(rng: np.random.Generator) -> Network:
    return build_network((16, 16, 1), 4, rng, conv_filters=2, hidden=8)


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "strategy": "dividemix-WS-WAW",
            "epochs": 3,
            "seeds": [1],
            "output_dir": str(tmp_path / "runs"),
            "probe_epoch": 2,
            "probe_bins": 10,
            "data": {
                "glyph": {"num_classes": 3, "samples_per_class": 8, "image_size": 16},
                "test_samples_per_class": 4,
            },
            "noise": {"kind": "sym", "rate": 0.5},
            "optim": {"batch_size": 8, "drop_epoch": 2},
            "dividemix": {"warm_up": 1},
            "coteaching": {"warm_up": 1},
            "mdyrh": {"warm_up": 1},
        }
    )
