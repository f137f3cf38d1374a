import json

import pytest

from earsep.config import (
    CorpusOptions,
    get_params_and_docs,
    load_config,
    section_class,
    SECTIONS,
)
from earsep.dsp import StftConfig
from earsep.errors import ConfigError
from earsep.scenes.dataset import SceneGrid


@pytest.fixture
def write_config(tmp_path):
    def write(text):
        path = tmp_path / "earsep.conf"
        path.write_text(text)
        return str(path)

    return write


class TestLoad:
    def test_defaults(self):
        config = load_config(use_defaults=False)
        assert config.files == []
        assert set(config.sections) == set(SECTIONS)
        assert config["stft"] == StftConfig()
        assert config.seed == 0 and config.sample_rate == 16000
        assert config["model"].bins == config["stft"].n_bins
        json.dumps(config.to_dict())

    def test_values(self, write_config):
        path = write_config(
            "[earsep]\nseed = 7\nsample_rate = 8000\n"
            "[grid]\nt60 = 0, 0.5\nsnr = -5 5\ntrain = 3\nt60_range = none\n"
            "[model]\nencoder_channels = 4, 8\ndecoder_layers = 2\nskip_proj_dim = 16\n"
            "[shadow]\nenabled = no\n"
        )
        config = load_config([path], use_defaults=False)
        assert config.files == [path]
        assert config.seed == 7
        grid = config["grid"]
        assert grid.t60 == (0.0, 0.5) and grid.snr == (-5.0, 5.0) and grid.train == 3
        assert grid.t60_range is None
        assert config["model"].encoder_channels == (4, 8)
        assert config["model"].skip_dim == 16
        shadow = config.shadow()
        assert not shadow.enabled and shadow.sample_rate == 8000

    def test_overrides(self):
        config = load_config(use_defaults=False)
        new = config.with_overrides(earsep=dict(seed=3), train=dict(max_epochs=2))
        assert new.seed == 3 and new["train"].max_epochs == 2
        assert config.seed == 0

    def test_unknown_key(self, write_config):
        path = write_config("[model]\nbogus = 1\n")
        with pytest.raises(ConfigError, match=r"\[model\] bogus: unknown key"):
            load_config([path], use_defaults=False)

    def test_unparsable(self, write_config):
        path = write_config("[train]\nmax_epochs = many\n")
        with pytest.raises(ConfigError, match=r"\[train\] max_epochs: cannot parse"):
            load_config([path], use_defaults=False)

    def test_invalid_value(self, write_config):
        path = write_config("[model]\nembed_dim = 127\n")
        with pytest.raises(ConfigError, match=r"\[model\] embed_dim: .*divisible") as err:
            load_config([path], use_defaults=False)
        assert err.value.category == "config"
        assert (err.value.section, err.value.key) == ("model", "embed_dim")

    def test_excluded_key(self, write_config):
        """T60 comes from the grid, not the room section."""
        path = write_config("[room]\nt60 = 0.3\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config([path], use_defaults=False)

    def test_unknown_section(self, write_config):
        path = write_config("[rooom]\nt60 = 0.3\n")
        with pytest.raises(ConfigError, match=r"\[rooom\]: unknown section"):
            load_config([path], use_defaults=False)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config([str(tmp_path / "nope.conf")])

    def test_malformed(self, write_config):
        path = write_config("seed = 1\n")
        with pytest.raises(ConfigError, match="Malformed"):
            load_config([path], use_defaults=False)


class TestDocs:
    @pytest.mark.parametrize("name", sorted(SECTIONS))
    def test_sections_documented(self, name):
        params = get_params_and_docs(section_class(name))
        assert params
        if name not in ("stft", "room", "array", "shadow"):
            assert all(_doc for (_p, _d, _doc) in params), name

    def test_grid(self):
        names = [_p for (_p, _d, _doc) in get_params_and_docs(SceneGrid)]
        assert names[:3] == ["t60", "t60_range", "snr"]
        assert dict((_p, _d) for (_p, _d, _doc) in get_params_and_docs(CorpusOptions))[
            "synthetic_speakers"
        ] == 16
