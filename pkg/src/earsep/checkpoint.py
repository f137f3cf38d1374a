"""Checkpoint files.

A checkpoint is a `torch.save` dictionary holding only tensors and plain Python
containers, so it loads with ``weights_only=True``::

    schema_version   int
    model_config     dict (ModelConfig fields)
    stft_config      dict (StftConfig fields) or None
    state_dict       parameter and buffer tensors by name
    optimizer        optimizer state_dict or None
    train_state      dict (epoch, lr, best metric, counters) or None
    rng_state        torch CPU RNG state tensor (restored on resume)
    history          list of per-epoch dicts
"""
import os

import attr
import torch

from . import utils
from .dsp import StftConfig
from .errors import ModelError, SignalError
from .model import ModelConfig, EarConditionedSeparator

__all__ = [
    "SCHEMA_VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_stft",
    "load_model",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

SCHEMA_VERSION = 2


def save_checkpoint(
    path, model, optimizer=None, train_state=None, history=(), stft_config=None
):
    """Write `model` (and optional training state) to `path` atomically."""
    payload = dict(
        schema_version=SCHEMA_VERSION,
        model_config=model.cfg.to_dict(),
        stft_config=None if stft_config is None else attr.asdict(stft_config),
        state_dict={_k: _v.detach().cpu() for _k, _v in model.state_dict().items()},
        optimizer=None if optimizer is None else optimizer.state_dict(),
        train_state=None if train_state is None else utils.to_jsonable(train_state),
        rng_state=torch.get_rng_state(),
        history=utils.to_jsonable(list(history)),
    )
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    _LOGGER.debug(f"Saved checkpoint {path}")
    return path


def load_checkpoint(path):
    """Return the checkpoint dictionary stored at `path`."""
    if not os.path.exists(path):
        raise ModelError(f"Checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as err:
        raise ModelError(f"Cannot read checkpoint {path}: {err}") from err
    version = payload.get("schema_version") if isinstance(payload, dict) else None
    if version != SCHEMA_VERSION:
        raise ModelError(
            f"Checkpoint {path} has schema version {version}; expected {SCHEMA_VERSION}"
        )
    return payload


def checkpoint_stft(payload):
    """Return the `StftConfig` stored in `payload` (None if absent)."""
    if payload.get("stft_config") is None:
        return None
    try:
        return StftConfig(**payload["stft_config"])
    except (SignalError, TypeError) as err:
        raise ModelError(f"Checkpoint has an invalid STFT config: {err}") from err


def load_model(path, bins=None, stft_config=None):
    """Return `(model, payload)` restored from the checkpoint at `path`.

    Parameters
    ----------
    bins : int, None
       If given, the model's bin count must match (e.g. the STFT in use).
    stft_config : StftConfig, None
       If given, it must equal the STFT the model was trained with (when the
       checkpoint records one) and its bin count must match the model.
    """
    payload = load_checkpoint(path)
    cfg = ModelConfig.from_dict(payload["model_config"])
    if stft_config is not None:
        bins = stft_config.n_bins if bins is None else bins
        trained = checkpoint_stft(payload)
        if trained is not None and trained != stft_config:
            raise ModelError(
                f"Checkpoint was trained with {trained} but the current STFT is "
                f"{stft_config}"
            )
    if bins is not None and cfg.bins != bins:
        raise ModelError(
            f"Checkpoint model expects {cfg.bins} STFT bins but the data has {bins}"
        )
    model = EarConditionedSeparator(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
