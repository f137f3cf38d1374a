"""
Ear-Conditioned Separator
=========================

Complex-STFT in, one complex spectrogram per ear out.

Data flow for a mixture spectrogram ``X`` of shape ``(B, 8, T, F)``::

    X --real view--> (B, 16, T, F) --encode--> (B, T, D) --attend--> (B, T, D)
    X[:, 0:4] --ear_skip_project(left)--> (B, T, S) --+
                                                      +--decode(left)--> (B, T, F)
    X[:, 4:8] --ear_skip_project(right)-> (B, T, S) --+--decode(right)-> (B, T, F)

Real view
---------
Channel ``2*c + p`` of the real view holds part ``p`` (0 = real, 1 = imaginary) of
microphone ``c``.  Flattened per frame, value ``(c, p, f)`` sits at index
``(2*c + p)*F + f``; the skip projections read the same layout restricted to their
four microphones.

Encoder
-------
One ``(1, 3)`` convolution with frequency stride 2 per `encoder_channels` entry
(each followed by batch normalization and ReLU), residual blocks at the lowest
resolution, then a temporal convolution of width ``2*tau + 1`` (zero-padded) over
the flattened ``channels x bins`` features.  Only that last layer mixes frames, so
the feature of frame ``t`` depends on frames ``t - tau ... t + tau`` only.

Decoders
--------
Each decoder concatenates the attended features with its ear's skip embedding,
applies a linear layer (ReLU, dropout) back to the lowest spectral resolution, and
mirrors the encoder with transposed convolutions.  The output padding of each stage
is chosen so the bin count of the matching encoder stage (odd or even) is recovered
exactly.  The last layer is linear and emits real and imaginary parts per bin.
"""
import math

import attr
import numpy as np
import torch
from torch import nn

from . import utils
from .config import param
from .errors import ModelError

__all__ = [
    "ModelConfig",
    "EarConditionedSeparator",
    "init_params",
    "param_digest",
    "count_params",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

N_MICS = 8
SIDES = ("left", "right")


def _ints(value):
    return tuple(int(_v) for _v in value)


@attr.s(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    tau = param(2, "Temporal context half-width (frames).")
    bins = param(257, "Number of STFT bins F (fft_size/2 + 1).")
    encoder_channels = param(
        (32, 64, 128), "Channels of the frequency-downsampling stages.", converter=_ints
    )
    n_residual_blocks = param(4, "Residual blocks after downsampling.")
    attention_heads = param(4, "Attention heads.")
    embed_dim = param(128, "Frame feature dimension D.")
    decoder_layers = param(3, "Upsampling layers per decoder (= len(encoder_channels)).")
    skip_proj_dim = param(None, "Skip embedding size S (defaults to embed_dim).", kind="?int")
    dropout = param(0.1, "Dropout probability in the decoders.")

    def __attrs_post_init__(self):
        for name in ("bins", "embed_dim", "attention_heads", "decoder_layers"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive (got {getattr(self, name)})")
        if self.tau < 0:
            raise ModelError(f"tau must be >= 0 (got {self.tau})")
        if self.n_residual_blocks < 0:
            raise ModelError(f"n_residual_blocks must be >= 0 (got {self.n_residual_blocks})")
        if not self.encoder_channels or min(self.encoder_channels) <= 0:
            raise ModelError(f"encoder_channels must be positive (got {self.encoder_channels})")
        if self.embed_dim % self.attention_heads:
            raise ModelError(
                f"embed_dim ({self.embed_dim}) must be divisible by attention_heads "
                f"({self.attention_heads})"
            )
        if self.decoder_layers != len(self.encoder_channels):
            raise ModelError(
                f"decoder_layers ({self.decoder_layers}) must equal the number of "
                f"encoder stages ({len(self.encoder_channels)})"
            )
        if self.skip_proj_dim is not None and self.skip_proj_dim <= 0:
            raise ModelError(f"skip_proj_dim must be positive (got {self.skip_proj_dim})")
        if not 0 <= self.dropout < 1:
            raise ModelError(f"dropout must lie in [0, 1) (got {self.dropout})")

    @property
    def skip_dim(self):
        return self.embed_dim if self.skip_proj_dim is None else self.skip_proj_dim

    @property
    def stage_bins(self):
        """Bin count at the input of each encoder stage and after the last.

        >>> ModelConfig(bins=9, encoder_channels=(4, 8), decoder_layers=2).stage_bins
        [9, 5, 3]
        """
        bins = [self.bins]
        for _c in self.encoder_channels:
            bins.append(math.ceil(bins[-1] / 2))
        return bins

    def to_dict(self):
        return utils.to_jsonable(attr.asdict(self))

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _freq_conv(c_in, c_out):
    return nn.Conv2d(c_in, c_out, kernel_size=(1, 3), stride=(1, 2), padding=(0, 1))


def _freq_deconv(c_in, c_out, n_out):
    # (n_in - 1)*2 - 2 + 3 + output_padding = n_out with n_in = ceil(n_out / 2)
    output_padding = 1 - n_out % 2
    return nn.ConvTranspose2d(
        c_in,
        c_out,
        kernel_size=(1, 3),
        stride=(1, 2),
        padding=(0, 1),
        output_padding=(0, output_padding),
    )


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, (1, 3), padding=(0, 1)),
            nn.BatchNorm2d(channels),
            nn.ReLU(),
            nn.Conv2d(channels, channels, (1, 3), padding=(0, 1)),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return torch.relu(x + self.body(x))


class Decoder(nn.Module):
    """One ear's decoder."""

    def __init__(self, cfg):
        super().__init__()
        channels = list(cfg.encoder_channels)
        bins = cfg.stage_bins
        self.low_channels, self.low_bins = channels[-1], bins[-1]
        self.fuse = nn.Linear(cfg.embed_dim + cfg.skip_dim, self.low_channels * self.low_bins)
        self.dropout = nn.Dropout(cfg.dropout)
        outs = channels[-2::-1] + [2]
        ins = channels[::-1]
        self.ups = nn.ModuleList(
            _freq_deconv(_c_in, _c_out, _n)
            for _c_in, _c_out, _n in zip(ins, outs, bins[-2::-1])
        )

    def forward(self, features, skip):
        B, T, _ = features.shape
        h = self.dropout(torch.relu(self.fuse(torch.cat([features, skip], dim=-1))))
        h = h.reshape(B, T, self.low_channels, self.low_bins).permute(0, 2, 1, 3)
        for n, up in enumerate(self.ups):
            h = up(h)
            if n < len(self.ups) - 1:
                h = self.dropout(torch.relu(h))
        return torch.complex(h[:, 0], h[:, 1])


class EarConditionedSeparator(nn.Module):
    """The separation network.

    Parameters
    ----------
    cfg : ModelConfig
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        layers, c_in = [], 2 * N_MICS
        for c_out in cfg.encoder_channels:
            layers += [_freq_conv(c_in, c_out), nn.BatchNorm2d(c_out), nn.ReLU()]
            c_in = c_out
        layers += [ResidualBlock(c_in) for _n in range(cfg.n_residual_blocks)]
        self.downsample = nn.Sequential(*layers)
        self.temporal = nn.Conv1d(
            c_in * cfg.stage_bins[-1],
            cfg.embed_dim,
            kernel_size=2 * cfg.tau + 1,
            padding=cfg.tau,
        )
        self.attention = nn.MultiheadAttention(
            cfg.embed_dim, cfg.attention_heads, batch_first=True
        )
        self.skip = nn.ModuleDict(
            {_s: nn.Linear(4 * 2 * cfg.bins, cfg.skip_dim) for _s in SIDES}
        )
        self.decoders = nn.ModuleDict({_s: Decoder(cfg) for _s in SIDES})

    ######################################################################
    # Views
    def _check(self, X):
        if X.ndim == 3:
            X = X[None]
        if X.ndim != 4 or X.shape[1] != N_MICS or X.shape[-1] != self.cfg.bins:
            raise ModelError(
                f"Expected a (batch, {N_MICS}, frames, {self.cfg.bins}) spectrogram, "
                f"got {tuple(X.shape)}"
            )
        if not X.is_complex():
            raise ModelError("Network input must be a complex spectrogram")
        return X

    @staticmethod
    def real_view(X):
        """Return ``(B, 16, T, F)`` reals with channel ``2*c + part``."""
        B, C, T, F = X.shape
        return torch.view_as_real(X).permute(0, 1, 4, 2, 3).reshape(B, 2 * C, T, F)

    ######################################################################
    # Stages
    def encode(self, x):
        """Return ``(B, T, D)`` frame features of the real view `x`."""
        if x.ndim != 4 or x.shape[1] != 2 * N_MICS or x.shape[-1] != self.cfg.bins:
            raise ModelError(
                f"Encoder expects (batch, {2 * N_MICS}, frames, {self.cfg.bins}), "
                f"got {tuple(x.shape)}"
            )
        h = self.downsample(x)
        B, C, T, F = h.shape
        h = h.permute(0, 1, 3, 2).reshape(B, C * F, T)
        return self.temporal(h).transpose(1, 2)

    def attend(self, features, return_weights=False):
        """Return self-attended features (with residual) and optionally weights.

        Weights have shape ``(B, heads, T, T)``; each query row sums to 1.
        """
        if features.ndim != 3 or features.shape[-1] != self.cfg.embed_dim:
            raise ModelError(
                f"Attention expects (batch, frames, {self.cfg.embed_dim}), "
                f"got {tuple(features.shape)}"
            )
        out, weights = self.attention(
            features,
            features,
            features,
            need_weights=return_weights,
            average_attn_weights=False,
        )
        out = features + out
        return (out, weights) if return_weights else out

    def ear_skip_project(self, X, side):
        """Return the ``(B, T, S)`` linear projection of one ear's raw channels."""
        if side not in SIDES:
            raise ModelError(f"side must be one of {SIDES} (got {side!r})")
        X = self._check(X)
        start = 0 if side == "left" else 4
        x = self.real_view(X[:, start : start + 4])
        B, C, T, F = x.shape
        x = x.permute(0, 2, 1, 3).reshape(B, T, C * F)
        return self.skip[side](x)

    def decode(self, features, skip, side):
        """Return the ``(B, T, F)`` complex estimate for `side`."""
        if features.shape[:2] != skip.shape[:2] or skip.shape[-1] != self.cfg.skip_dim:
            raise ModelError(
                f"Decoder got features {tuple(features.shape)} and skip "
                f"{tuple(skip.shape)}; expected matching (batch, frames) and "
                f"skip size {self.cfg.skip_dim}"
            )
        return self.decoders[side](features, skip)

    def forward(self, X):
        """Return ``(B, 2, T, F)`` complex estimates (left, right) for mixture `X`.

        `X` is ``(B, 8, T, F)`` or ``(8, T, F)`` complex.  Output 0 is always the
        left-ear estimate and output 1 the right-ear estimate.
        """
        X = self._check(X)
        if not torch.isfinite(torch.view_as_real(X)).all():
            raise ModelError("Network input contains non-finite values")
        features = self.attend(self.encode(self.real_view(X)))
        return torch.stack(
            [self.decode(features, self.ear_skip_project(X, _s), _s) for _s in SIDES],
            dim=1,
        )


def init_params(cfg, seed=0):
    """Return a freshly initialized `EarConditionedSeparator`.

    Weights are drawn uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` from a
    generator seeded with `seed`, in sorted parameter-name order; biases are zero and
    normalization scales one.  The global torch RNG is not touched.
    """
    if not isinstance(cfg, ModelConfig):
        raise ModelError(f"Expected a ModelConfig, got {type(cfg).__name__}")
    with torch.random.fork_rng(devices=[]):
        model = EarConditionedSeparator(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in sorted(model.named_parameters()):
            if p.ndim == 1:
                if name.endswith("bias"):
                    p.zero_()
                else:
                    p.fill_(1.0)
                continue
            fan_in = p.shape[1] * int(np.prod(p.shape[2:], dtype=int))
            bound = 1 / math.sqrt(fan_in)
            p.uniform_(-bound, bound, generator=gen)
    return model


def param_digest(model):
    """Return a sha256 digest of all parameters and buffers."""
    state = model.state_dict()
    return utils.array_digest(
        *(state[_k].detach().cpu().numpy() for _k in sorted(state))
    )


def count_params(model):
    return sum(_p.numel() for _p in model.parameters())
