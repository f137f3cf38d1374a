import json
import os.path
import pathlib

import numpy as np
import pytest
import torch
from torch.utils.data import DataLoader

from earsep.checkpoint import (
    SCHEMA_VERSION,
    checkpoint_stft,
    load_checkpoint,
    load_model,
    save_checkpoint,
)
from earsep.dsp import StftConfig
from earsep.errors import ModelError, TrainingError
from earsep.interfaces import IValidator, implementer, verifyClass
from earsep.metrics import loss, si_sdr
from earsep.model import ModelConfig, init_params, param_digest
from earsep.training import (
    LOG,
    ManifestDataset,
    ManifestValidator,
    TrainConfig,
    TrainState,
    fit,
    forward_waveforms,
    make_optimizer,
    train_step,
)


@implementer(IValidator)
class ConstantValidator:
    """Reports the same score every epoch."""

    def __init__(self, value=0.0):
        self.value = value
        self.epochs = []

    def __call__(self, model, epoch):
        self.epochs.append(epoch)
        return self.value


# Wide enough for the skip path to keep every raw bin of its ear.
OVERFIT_MODEL = ModelConfig(
    tau=1,
    bins=9,
    encoder_channels=(16, 32),
    n_residual_blocks=1,
    attention_heads=2,
    embed_dim=32,
    decoder_layers=2,
    skip_proj_dim=72,
    dropout=0.0,
)


def _batch(manifest, size=2):
    dataset = ManifestDataset(manifest)
    return next(iter(DataLoader(dataset, batch_size=size)))


class TestSchedule:
    def test_constant_metric(self):
        """Halve after epochs 6 and 11 and stop after 11."""
        cfg = TrainConfig()
        state = TrainState(lr=cfg.learning_rate)
        halved = []
        while not state.stopped:
            state.epoch += 1
            _improved, halve, _stop = state.update(0.0, cfg)
            if halve:
                halved.append(state.epoch)
        assert halved == [6, 11]
        assert state.epoch == 11 and state.best_epoch == 1
        assert np.isclose(state.lr, 2.5e-5)

    def test_improvement_resets(self):
        cfg = TrainConfig(lr_halving_patience=2, early_stop_patience=3)
        state = TrainState(lr=1.0)
        for epoch, metric in enumerate([1.0, 0.5, 0.5, 2.0, 1.0, 1.0, 1.0], start=1):
            state.epoch = epoch
            state.update(metric, cfg)
        assert state.best_epoch == 4 and state.stopped
        assert state.halvings == 2 and state.lr == 0.25

    def test_tolerance(self):
        cfg = TrainConfig(improvement_tol=0.1)
        state = TrainState(lr=1.0, best_metric=1.0)
        assert not state.update(1.05, cfg)[0]
        assert state.update(1.2, cfg)[0]

    def test_round_trip(self):
        state = TrainState(lr=0.5, epoch=3)
        d = json.loads(json.dumps(state.to_dict()))
        assert TrainState.from_dict(d) == state

    def test_invalid(self):
        with pytest.raises(TrainingError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(TrainingError):
            TrainConfig(dtype="float16")


class TestStep:
    def test_zero_lr(self, toy_dataset, tiny_model_cfg, tiny_stft):
        model = init_params(tiny_model_cfg, seed=1)
        before = {_n: _p.detach().clone() for _n, _p in model.named_parameters()}
        optimizer = make_optimizer(model, TrainConfig(learning_rate=0.0))
        train_step(model, optimizer, _batch(toy_dataset["train"]), tiny_stft)
        for name, p in model.named_parameters():
            assert torch.equal(p, before[name]), name

    def test_loss(self, toy_dataset, tiny_model_cfg, tiny_stft):
        model = init_params(tiny_model_cfg, seed=1)
        batch = _batch(toy_dataset["train"])
        optimizer = make_optimizer(model, TrainConfig())
        result = train_step(model, optimizer, batch, tiny_stft)
        targets = batch["targets"]
        assert result.estimates.shape == targets.shape
        expected = loss(result.estimates[:, 0], result.estimates[:, 1],
                        targets[:, 0], targets[:, 1])
        assert np.isclose(result.loss, float(expected), rtol=1e-5)

    def test_path_manifest(self, toy_dataset, tiny_stft):
        path = pathlib.Path(toy_dataset["train"])
        dataset = ManifestDataset(path)
        assert len(dataset) == len(ManifestDataset(str(path))) == 4
        validator = ManifestValidator(pathlib.Path(toy_dataset["val"]), tiny_stft)
        assert len(validator.records) == 2

    def test_forward_shapes(self, tiny_model_cfg, tiny_stft):
        model = init_params(tiny_model_cfg).eval()
        y = forward_waveforms(model, torch.randn(3, 8, 100), tiny_stft)
        assert y.shape == (3, 2, 100)

    def test_non_finite(self, toy_dataset, tiny_model_cfg, tiny_stft):
        model = init_params(tiny_model_cfg)
        batch = dict(_batch(toy_dataset["train"]))
        batch["targets"] = batch["targets"].clone()
        batch["targets"][1, 0, 10] = float("nan")
        with pytest.raises(TrainingError, match=r"example\(s\) \[1\]"):
            train_step(model, make_optimizer(model, TrainConfig()), batch, tiny_stft)

    def test_bad_batch(self, tiny_model_cfg, tiny_stft):
        model = init_params(tiny_model_cfg)
        batch = dict(mixture=torch.zeros(2, 8, 100), targets=torch.zeros(2, 1, 100))
        with pytest.raises(TrainingError):
            train_step(model, make_optimizer(model, TrainConfig()), batch, tiny_stft)


class TestFit:
    def train_cfg(self, **kw):
        args = dict(max_epochs=2, batch_size=2, steps_per_epoch=1, heartbeat_s=0)
        args.update(kw)
        return TrainConfig(**args)

    def test_validator_interface(self):
        assert verifyClass(IValidator, ManifestValidator)

    def test_schedule(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        validator = ConstantValidator()
        result = fit(
            toy_dataset["train"], None, tiny_model_cfg, self.train_cfg(max_epochs=30),
            str(tmp_path), stft_config=tiny_stft, validator=validator,
        )
        assert validator.epochs == list(range(1, 12))
        lrs = [_h["lr"] for _h in result.history]
        assert lrs == [1e-4] * 6 + [5e-5] * 5
        assert np.isclose(result.state.lr, 2.5e-5)
        assert [_h["halved"] for _h in result.history].count(True) == 2
        with open(tmp_path / LOG) as f:
            assert len(f.readlines()) == 11

    def test_resume(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        """Stopping and resuming gives the same run as an uninterrupted one."""
        args = (toy_dataset["train"], toy_dataset["val"], tiny_model_cfg)
        full = fit(*args, self.train_cfg(max_epochs=3), str(tmp_path / "a"),
                   stft_config=tiny_stft)
        fit(*args, self.train_cfg(max_epochs=1), str(tmp_path / "b"), stft_config=tiny_stft)
        resumed = fit(*args, self.train_cfg(max_epochs=3), str(tmp_path / "b"),
                      stft_config=tiny_stft, resume=True)
        assert resumed.history == full.history
        a, _ = load_model(str(tmp_path / "a" / "last.pt"))
        b, _ = load_model(str(tmp_path / "b" / "last.pt"))
        assert param_digest(a) == param_digest(b)
        with open(tmp_path / "b" / LOG) as f:
            assert len(f.readlines()) == 3

    def test_refuse_existing_run(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        args = (toy_dataset["train"], None, tiny_model_cfg, self.train_cfg(max_epochs=1),
                str(tmp_path))
        fit(*args, stft_config=tiny_stft, validator=ConstantValidator())
        with pytest.raises(TrainingError, match="already holds a run"):
            fit(*args, stft_config=tiny_stft, validator=ConstantValidator())
        fit(*args, stft_config=tiny_stft, validator=ConstantValidator(), overwrite=True)

    def test_errors(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        cfg = self.train_cfg()
        with pytest.raises(TrainingError, match="bins"):
            fit(toy_dataset["train"], toy_dataset["val"], tiny_model_cfg, cfg, str(tmp_path))
        with pytest.raises(TrainingError, match="IValidator"):
            fit(toy_dataset["train"], None, tiny_model_cfg, cfg, str(tmp_path),
                stft_config=tiny_stft, validator=lambda _m, _e: 0.0)
        with pytest.raises(TrainingError, match="validation"):
            fit(toy_dataset["train"], None, tiny_model_cfg, cfg, str(tmp_path),
                stft_config=tiny_stft)

    def test_resume_restores_rng(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        args = (toy_dataset["train"], None, tiny_model_cfg, self.train_cfg(max_epochs=1),
                str(tmp_path))
        fit(*args, stft_config=tiny_stft, validator=ConstantValidator())
        saved = load_checkpoint(str(tmp_path / "last.pt"))["rng_state"]
        torch.manual_seed(123)
        fit(*args, stft_config=tiny_stft, validator=ConstantValidator(), resume=True)
        assert torch.equal(torch.get_rng_state(), saved)

    def test_resume_other_stft(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        args = (toy_dataset["train"], None, tiny_model_cfg)
        fit(*args, self.train_cfg(max_epochs=1), str(tmp_path), stft_config=tiny_stft,
            validator=ConstantValidator())
        with pytest.raises(TrainingError, match="trained with"):
            fit(*args, self.train_cfg(max_epochs=2), str(tmp_path),
                stft_config=StftConfig(window_length=16, hop=4),
                validator=ConstantValidator(), resume=True)

    @pytest.mark.slow
    def test_overfit(self, toy_dataset, tiny_stft):
        """200 steps on the four training scenes beat the in-ear mixtures by 5 dB."""
        batch = _batch(toy_dataset["train"], size=4)
        assert len(batch["mixture"]) == 4
        model = init_params(OVERFIT_MODEL, seed=0)
        optimizer = make_optimizer(model, TrainConfig(learning_rate=3e-3))
        losses = []
        for _n in range(200):
            result = train_step(model, optimizer, batch, tiny_stft)
            losses.append(result.loss)
        assert losses[0] - losses[-1] >= 3

        mixture, targets = batch["mixture"].double(), batch["targets"].double()
        estimates = result.estimates.double()
        trained, unprocessed = [], []
        for b in range(4):
            for side, channel in ((0, 0), (1, 4)):
                target = targets[b, side].numpy()
                trained.append(si_sdr(estimates[b, side].numpy(), target))
                unprocessed.append(si_sdr(mixture[b, channel].numpy(), target))
        assert np.mean(trained) >= np.mean(unprocessed) + 5


class TestCheckpoint:
    def test_round_trip(self, tiny_model_cfg, tmp_path):
        model = init_params(tiny_model_cfg, seed=4)
        path = save_checkpoint(str(tmp_path / "m.pt"), model, history=[dict(epoch=1)])
        restored, payload = load_model(path, bins=tiny_model_cfg.bins)
        assert param_digest(restored) == param_digest(model)
        assert payload["schema_version"] == SCHEMA_VERSION
        assert payload["history"] == [dict(epoch=1)]
        assert not restored.training
        assert checkpoint_stft(payload) is None

    def test_stft(self, tiny_model_cfg, tiny_stft, tmp_path):
        model = init_params(tiny_model_cfg)
        path = save_checkpoint(str(tmp_path / "m.pt"), model, stft_config=tiny_stft)
        _model, payload = load_model(path, stft_config=tiny_stft)
        assert checkpoint_stft(payload) == tiny_stft
        # Same bin count, different hop.
        with pytest.raises(ModelError, match="trained with"):
            load_model(path, stft_config=StftConfig(window_length=16, hop=4))
        # Without a recorded STFT only the bin count is checked.
        bare = save_checkpoint(str(tmp_path / "bare.pt"), model)
        load_model(bare, stft_config=StftConfig(window_length=16, hop=4))
        with pytest.raises(ModelError, match="STFT bins"):
            load_model(bare, stft_config=StftConfig())

    def test_fit_records_stft(self, toy_dataset, tiny_model_cfg, tiny_stft, tmp_path):
        cfg = TrainConfig(max_epochs=1, batch_size=2, steps_per_epoch=1, heartbeat_s=0)
        result = fit(toy_dataset["train"], None, tiny_model_cfg, cfg, str(tmp_path),
                     stft_config=tiny_stft, validator=ConstantValidator())
        for path in (result.checkpoint, str(tmp_path / "last.pt")):
            assert checkpoint_stft(load_checkpoint(path)) == tiny_stft

    def test_errors(self, tiny_model_cfg, tmp_path):
        path = save_checkpoint(str(tmp_path / "m.pt"), init_params(tiny_model_cfg))
        with pytest.raises(ModelError, match="STFT bins"):
            load_model(path, bins=257)
        with pytest.raises(ModelError, match="does not exist"):
            load_checkpoint(str(tmp_path / "nope.pt"))
        torch.save(dict(schema_version=0), str(tmp_path / "old.pt"))
        with pytest.raises(ModelError, match="schema version"):
            load_checkpoint(str(tmp_path / "old.pt"))
        assert not os.path.exists(path + ".tmp")


@pytest.mark.bench
def test_desk_experiment(tmp_path):
    """About ten minutes of scenes: synthesize, train to early stop, evaluate."""
    from earsep.metrics import NetworkSeparator, evaluate_dataset
    from earsep.scenes.dataset import SceneGrid, build_dataset
    from earsep.scenes.testing import write_synthetic_corpus

    corpus = write_synthetic_corpus(str(tmp_path / "corpus"), n_speakers=80)
    # Split sizes are whole cycles of the 3 x 7 condition grid.
    grid = SceneGrid(train=168, val=21, test=21)
    manifests = build_dataset(corpus, grid, str(tmp_path / "data"), workers=4)
    stft = StftConfig()
    model_cfg = ModelConfig(encoder_channels=(16, 32, 64), n_residual_blocks=2, embed_dim=64)
    result = fit(manifests["train"], manifests["val"], model_cfg,
                 TrainConfig(max_epochs=60, learning_rate=1e-3), str(tmp_path / "run"),
                 stft_config=stft)
    model, _ = load_model(result.checkpoint, stft_config=stft)
    report = evaluate_dataset(manifests["test"], NetworkSeparator(model, stft))
    assert report.aggregates["overall"]["si_sdri"] > 0

    by_t60 = report.aggregates["by_t60"]
    assert sorted(by_t60) == ["0.0", "0.3", "0.6"]
    trained = [by_t60[_t]["model"]["si_sdr"] for _t in ("0.0", "0.3", "0.6")]
    for t60, stats in by_t60.items():
        assert stats["model"]["si_sdr"] > stats["unprocessed"]["si_sdr"], t60
    assert trained[0] > trained[1] > trained[2]
