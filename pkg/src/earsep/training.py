"""
Training
========

End-to-end training on manifests produced by :mod:`earsep.scenes.dataset`: STFT of
the mixture, forward pass, inverse STFT of both estimates, and the negative mean
SI-SDR against the fixed left/right ear targets.

Schedule
--------
After every epoch the validator returns the mean validation SI-SDR.  A value that
strictly exceeds the best so far (by more than `improvement_tol`) resets both
patience counters.  Otherwise both counters increase: when the learning-rate counter
reaches `lr_halving_patience` the rate is halved for the following epochs and that
counter restarts; when the early-stop counter reaches `early_stop_patience` training
stops.  With the defaults (5, 10) and a validation metric that never improves after
epoch 1, the rate is halved after epochs 6 and 11 and training stops after epoch 11.

Reproducibility
---------------
Shuffling, dropout and any other randomness of epoch ``e`` are seeded from
``(seed, e)``.  Resuming from ``last.pt`` restores the model, optimizer and schedule
state, so the continuation is identical to an uninterrupted run.
"""
import json
import math
import os
import time

import attr
import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from . import utils
from .checkpoint import checkpoint_stft, load_checkpoint, save_checkpoint
from .config import param
from .contexts import NoInterrupt
from .dsp import StftConfig, istft_tensor, stft_tensor
from .errors import TrainingError
from .interfaces import IValidator, implementer
from .metrics import NetworkSeparator, si_sdr, si_sdr_tensor
from .model import ModelConfig, init_params
from .scenes.dataset import load_example, manifest_records

__all__ = [
    "TrainConfig",
    "TrainState",
    "ManifestDataset",
    "ManifestValidator",
    "StepResult",
    "FitResult",
    "train_step",
    "fit",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log
log_task = _LOGGER.log_task

LAST = "last.pt"
BEST = "best.pt"
LOG = "train_log.jsonl"


@attr.s(frozen=True)
class TrainConfig:
    """Training hyperparameters."""

    learning_rate = param(1e-4, "Initial Adam learning rate.")
    lr_halving_patience = param(5, "Non-improving epochs before the rate is halved.")
    early_stop_patience = param(10, "Non-improving epochs before training stops.")
    max_epochs = param(100, "Maximum number of epochs.")
    batch_size = param(8, "Examples per batch.")
    seed = param(0, "Seed for initialization, shuffling and dropout.")
    improvement_tol = param(0.0, "Validation SI-SDR must exceed the best by more than this.")
    beta1 = param(0.9, "Adam beta1.")
    beta2 = param(0.999, "Adam beta2.")
    adam_eps = param(1e-8, "Adam epsilon.")
    steps_per_epoch = param(0, "Cap on batches per epoch (0 = full pass).")
    dtype = param("float32", "Floating point type: float32 or float64.")
    heartbeat_s = param(30.0, "Seconds between progress messages within an epoch.")

    def __attrs_post_init__(self):
        if self.learning_rate < 0:
            raise TrainingError(f"learning_rate must be >= 0 (got {self.learning_rate})")
        for name in ("lr_halving_patience", "early_stop_patience", "max_epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive (got {getattr(self, name)})")
        if self.dtype not in ("float32", "float64"):
            raise TrainingError(f"dtype must be float32 or float64 (got {self.dtype!r})")

    @property
    def torch_dtype(self):
        return getattr(torch, self.dtype)


@attr.s
class TrainState:
    """Mutable schedule state."""

    lr = attr.ib()
    epoch = attr.ib(default=0)
    best_metric = attr.ib(default=-math.inf)
    best_epoch = attr.ib(default=0)
    lr_counter = attr.ib(default=0)
    stop_counter = attr.ib(default=0)
    halvings = attr.ib(default=0)
    stopped = attr.ib(default=False)

    def update(self, metric, cfg):
        """Record the validation `metric` of the current epoch.

        Returns
        -------
        improved, halve, stop : bool
        """
        improved = metric > self.best_metric + cfg.improvement_tol
        halve = False
        if improved:
            self.best_metric, self.best_epoch = metric, self.epoch
            self.lr_counter = self.stop_counter = 0
        else:
            self.lr_counter += 1
            self.stop_counter += 1
            if self.lr_counter >= cfg.lr_halving_patience:
                halve, self.lr_counter = True, 0
                self.lr /= 2
                self.halvings += 1
        self.stopped = self.stop_counter >= cfg.early_stop_patience
        return improved, halve, self.stopped

    def to_dict(self):
        d = attr.asdict(self)
        if math.isinf(d["best_metric"]):
            d["best_metric"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("best_metric") is None:
            d["best_metric"] = -math.inf
        return cls(**d)


######################################################################
# Data
class ManifestDataset(Dataset):
    """Examples of a manifest as ``mixture (8, L)`` and ``targets (2, L)`` tensors."""

    def __init__(self, manifest, dtype=torch.float32):
        self.records = manifest_records(manifest)
        if not self.records:
            raise TrainingError(f"Manifest {manifest} is empty")
        self.dtype = dtype
        self._cache = {}

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        if i not in self._cache:
            example = load_example(self.records[i])
            targets = np.concatenate(
                [example.target_left.samples, example.target_right.samples]
            )
            self._cache[i] = dict(
                mixture=torch.as_tensor(example.mixture.samples, dtype=self.dtype),
                targets=torch.as_tensor(targets, dtype=self.dtype),
                index=int(self.records[i]["index"]),
            )
        return self._cache[i]

    @property
    def speakers(self):
        return {
            _s for _r in self.records for _s in (_r.get("speakers") or {}).values()
        }


@implementer(IValidator)
class ManifestValidator:
    """Mean SI-SDR (both ears, all examples) of the model on a manifest."""

    def __init__(self, manifest, stft_config=None):
        self.records = manifest_records(manifest)
        if not self.records:
            raise TrainingError(f"Validation manifest {manifest} is empty")
        self.examples = [load_example(_r) for _r in self.records]
        self.stft_config = stft_config or StftConfig()

    def __call__(self, model, epoch):
        separator = NetworkSeparator(model, self.stft_config)
        values = []
        for example in self.examples:
            left, right = separator.separate(example.mixture)
            values += [si_sdr(left, example.target_left), si_sdr(right, example.target_right)]
        model.train()
        return float(np.mean(values))


######################################################################
# Steps
@attr.s(frozen=True)
class StepResult:
    loss = attr.ib()
    estimates = attr.ib()


def forward_waveforms(model, mixture, stft_config):
    """Return ``(B, 2, L)`` waveform estimates for ``(B, 8, L)`` mixtures."""
    X = stft_tensor(mixture, stft_config)
    Y = model(X)
    return istft_tensor(Y, stft_config, length=mixture.shape[-1])


def train_step(model, optimizer, batch, stft_config=None):
    """Do one optimizer step on `batch` and return the `StepResult`.

    Parameters
    ----------
    batch : dict
       ``mixture (B, 8, L)``, ``targets (B, 2, L)`` and ``index (B,)``.
    """
    stft_config = stft_config or StftConfig()
    mixture, targets = batch["mixture"], batch["targets"]
    if mixture.ndim != 3 or len(mixture) == 0:
        raise TrainingError(f"Batch must be non-empty (B, 8, L); got {tuple(mixture.shape)}")
    if targets.shape != (mixture.shape[0], 2, mixture.shape[-1]):
        raise TrainingError(
            f"Targets {tuple(targets.shape)} do not match mixtures {tuple(mixture.shape)}"
        )
    model.train()
    optimizer.zero_grad()
    estimates = forward_waveforms(model, mixture, stft_config)
    # Per-example terms of `metrics.loss`.
    per_example = -0.5 * (
        si_sdr_tensor(estimates[:, 0], targets[:, 0])
        + si_sdr_tensor(estimates[:, 1], targets[:, 1])
    )
    bad = (~torch.isfinite(per_example)).nonzero().flatten().tolist()
    if bad:
        indices = batch.get("index")
        if indices is not None:
            indices = indices.tolist() if torch.is_tensor(indices) else list(indices)
            bad = [indices[_n] for _n in bad]
        raise TrainingError(f"Non-finite loss for example(s) {bad}; step aborted")
    value = per_example.mean()
    value.backward()
    optimizer.step()
    return StepResult(loss=float(value.detach()), estimates=estimates.detach())


def make_optimizer(model, cfg, lr=None):
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate if lr is None else lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.adam_eps,
    )


######################################################################
# Fit
@attr.s(frozen=True)
class FitResult:
    checkpoint = attr.ib()
    history = attr.ib()
    state = attr.ib()


class Heartbeat:
    """Logs progress at most every `interval` seconds."""

    def __init__(self, interval):
        self.interval = interval
        self.tic = time.time()
        self.steps = 0

    def beat(self, msg):
        self.steps += 1
        if self.interval and time.time() - self.tic > self.interval:
            log(f"{msg} ({self.steps} steps)")
            self.tic = time.time()


def _epoch_loader(dataset, cfg, epoch):
    gen = torch.Generator().manual_seed(utils.derive_seed(cfg.seed, epoch, 0))
    return DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True, generator=gen)


def fit(
    train_manifest,
    val_manifest,
    model_cfg,
    train_cfg,
    run_dir,
    stft_config=None,
    validator=None,
    resume=False,
    overwrite=False,
):
    """Train a model and return the `FitResult`.

    Parameters
    ----------
    train_manifest, val_manifest : str or list
       Manifests (paths or records).  `val_manifest` is only used if no
       `validator` is given.
    validator : IValidator, None
       Returns the validation SI-SDR after each epoch.
    resume : bool
       Continue from ``run_dir/last.pt``.
    overwrite : bool
       Allow starting afresh in a directory that already has a run.
    """
    stft_config = stft_config or StftConfig()
    if model_cfg.bins != stft_config.n_bins:
        raise TrainingError(
            f"Model expects {model_cfg.bins} bins but fft_size {stft_config.fft_size} "
            f"gives {stft_config.n_bins}"
        )
    dataset = ManifestDataset(train_manifest, dtype=train_cfg.torch_dtype)
    if validator is None:
        if val_manifest is None:
            raise TrainingError("Need a validation manifest or a validator")
        validator = ManifestValidator(val_manifest, stft_config)
        overlap = dataset.speakers & {
            _s for _r in validator.records for _s in (_r.get("speakers") or {}).values()
        }
        if overlap:
            _LOGGER.warning(f"Train and validation share speakers {sorted(overlap)}")
    elif not IValidator.providedBy(validator):
        raise TrainingError(f"{type(validator).__name__} does not provide IValidator")

    os.makedirs(run_dir, exist_ok=True)
    last, best, log_file = (os.path.join(run_dir, _f) for _f in (LAST, BEST, LOG))
    if resume:
        payload = load_checkpoint(last)
        trained = checkpoint_stft(payload)
        if trained is not None and trained != stft_config:
            raise TrainingError(f"{last} was trained with {trained}, not {stft_config}")
        model_cfg = ModelConfig.from_dict(payload["model_config"])
        model = init_params(model_cfg, train_cfg.seed).to(train_cfg.torch_dtype)
        model.load_state_dict(payload["state_dict"])
        state = TrainState.from_dict(payload["train_state"])
        optimizer = make_optimizer(model, train_cfg, lr=state.lr)
        optimizer.load_state_dict(payload["optimizer"])
        history = list(payload["history"])
        torch.set_rng_state(payload["rng_state"])
        log(f"Resuming from {last} after epoch {state.epoch}")
    else:
        if os.path.exists(last) and not overwrite:
            raise TrainingError(f"{run_dir} already holds a run; resume or overwrite")
        if os.path.exists(log_file):
            os.remove(log_file)
        model = init_params(model_cfg, train_cfg.seed).to(train_cfg.torch_dtype)
        state = TrainState(lr=train_cfg.learning_rate)
        optimizer = make_optimizer(model, train_cfg)
        history = []

    heartbeat = Heartbeat(train_cfg.heartbeat_s)
    with NoInterrupt() as interrupted:
        while state.epoch < train_cfg.max_epochs and not state.stopped:
            state.epoch += 1
            epoch, lr = state.epoch, state.lr
            torch.manual_seed(utils.derive_seed(train_cfg.seed, epoch, 1))
            for group in optimizer.param_groups:
                group["lr"] = lr
            losses = []
            with log_task(f"Epoch {epoch} (lr={lr:g})"):
                for n, batch in enumerate(_epoch_loader(dataset, train_cfg, epoch)):
                    if train_cfg.steps_per_epoch and n >= train_cfg.steps_per_epoch:
                        break
                    losses.append(train_step(model, optimizer, batch, stft_config).loss)
                    heartbeat.beat(f"epoch {epoch} loss {losses[-1]:.3f}")
                metric = float(validator(model, epoch))
                if not math.isfinite(metric):
                    raise TrainingError(f"Validation metric is {metric} at epoch {epoch}")
                improved, halved, stop = state.update(metric, train_cfg)
            entry = dict(
                epoch=epoch,
                lr=lr,
                train_loss=float(np.mean(losses)) if losses else None,
                val_si_sdr=metric,
                best_val_si_sdr=state.best_metric,
                improved=improved,
                halved=halved,
            )
            history.append(entry)
            log(
                f"epoch {epoch}: train loss {entry['train_loss']}, "
                f"val SI-SDR {metric:.3f} dB (best {state.best_metric:.3f})"
            )
            with open(log_file, "a") as f:
                f.write(json.dumps(utils.to_jsonable(entry)) + "\n")
            saved = (model, optimizer, state.to_dict(), history, stft_config)
            if improved:
                save_checkpoint(best, *saved)
            save_checkpoint(last, *saved)
            if halved:
                log(f"Validation stalled: learning rate halved to {state.lr:g}")
            if stop:
                log(f"Early stop after epoch {epoch}")
            if interrupted:
                _LOGGER.warning("Interrupted: stopping after checkpoint")
                break
    if not os.path.exists(best):
        raise TrainingError("Training finished without a best checkpoint")
    return FitResult(checkpoint=best, history=history, state=state)
