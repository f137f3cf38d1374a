import numpy as np
import pytest

from earsep import utils
from earsep.dsp import StftConfig
from earsep.model import ModelConfig
from earsep.scenes.dataset import SceneGrid, build_dataset
from earsep.scenes.testing import write_synthetic_corpus

utils.set_verbosity("WARNING")

# 16-point frames give 9 bins: small enough to train in seconds.
TINY_STFT = StftConfig(window_length=16, hop=8)
TINY_MODEL = ModelConfig(
    tau=1,
    bins=TINY_STFT.n_bins,
    encoder_channels=(4, 8),
    n_residual_blocks=1,
    attention_heads=2,
    embed_dim=8,
    decoder_layers=2,
    skip_proj_dim=8,
    dropout=0.0,
)


@pytest.fixture
def rng():
    return np.random.default_rng(2)


@pytest.fixture
def tiny_stft():
    return TINY_STFT


@pytest.fixture
def tiny_model_cfg():
    return TINY_MODEL


@pytest.fixture(scope="session")
def toy_grid():
    return SceneGrid(
        t60=(0.0, 0.2), snr=(0.0, 10.0), duration=1.0, train=4, val=2, test=2
    )


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory, toy_grid):
    directory = tmp_path_factory.mktemp("corpus")
    return write_synthetic_corpus(
        str(directory), n_speakers=12, utterances_per_speaker=1, n_noises=2,
        duration=toy_grid.duration, seed=3,
    )


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory, toy_corpus, toy_grid):
    """Manifests ``{split: path}`` of a small rendered dataset."""
    out_dir = tmp_path_factory.mktemp("data")
    return build_dataset(toy_corpus, toy_grid, str(out_dir), seed=5)
