"""
Signal Core
===========

Deterministic STFT analysis/synthesis, temporal context framing and waveform
utilities shared by the rest of the package.

Waveforms are stored as ``(channels, length)`` float64 numpy arrays.  Spectrograms
are stored one-sided as ``(channels, frames, bins)`` complex torch tensors so the
same code path serves data preparation and the differentiable training graph
(`stft_tensor` and `istft_tensor`).

Framing
-------
A signal of length ``L`` is analysed with ``T = 1 + ceil((L - W)/hop)`` frames of
length ``W``.  When ``(L - W)`` is a multiple of the hop this is the usual
``floor((L - W)/hop) + 1``; otherwise the tail is zero-padded so the final partial
frame is included and synthesis can return exactly ``L`` samples.

Synthesis divides the overlap-added, re-windowed frames by the overlap-added
squared window.  With a periodic Hann window at 50% overlap this reproduces the
input exactly on the fully overlapped interior; the first and last half-window
are attenuated where the envelope vanishes.

Parseval: for one frame, ``|X_0|**2 + 2*sum(|X_k|**2, 0<k<N/2) + |X_{N/2}|**2``
equals ``N * sum((x*w)**2)`` where ``N`` is the FFT size and ``w`` the window.
"""
import functools
import math

import attr
import numpy as np
import scipy.signal
import soundfile
import torch
import torch.nn.functional as F

from . import utils
from .errors import SignalError

__all__ = [
    "Waveform",
    "StftConfig",
    "ComplexSpectrogram",
    "ContextWindow",
    "stft",
    "istft",
    "stft_tensor",
    "istft_tensor",
    "frame_context",
    "peak_normalize",
    "read_wav",
    "write_wav",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

DEFAULT_SAMPLE_RATE = 16000


######################################################################
# Types
def _as_samples(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[None, :]
    return samples


@attr.s(frozen=True, eq=False)
class Waveform:
    """Multi- or single-channel sample sequence.

    Parameters
    ----------
    samples : array-like
       Real samples with shape ``(channels, length)``.  1D input is treated as a
       single channel.
    sample_rate : int
       Sampling rate in Hz.
    """

    samples = attr.ib(converter=_as_samples)
    sample_rate = attr.ib(default=DEFAULT_SAMPLE_RATE, converter=int)

    @samples.validator
    def _check_samples(self, attribute, value):
        if value.ndim != 2 or value.shape[0] < 1 or value.shape[1] < 1:
            raise SignalError(
                f"Waveform needs shape (channels >= 1, length > 0), got {value.shape}"
            )
        if not np.all(np.isfinite(value)):
            raise SignalError("Waveform contains non-finite samples")

    @sample_rate.validator
    def _check_rate(self, attribute, value):
        if value <= 0:
            raise SignalError(f"sample_rate must be positive (got {value})")

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def length(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        """Duration in seconds."""
        return self.length / self.sample_rate

    def channel(self, index):
        """Return a single-channel Waveform."""
        return Waveform(self.samples[index : index + 1], self.sample_rate)

    def scaled(self, gain):
        return Waveform(gain * self.samples, self.sample_rate)


def _positive(instance, attribute, value):
    if value <= 0:
        raise SignalError(f"{attribute.name} must be positive (got {value})")


@attr.s(frozen=True)
class StftConfig:
    """STFT parameters.

    The defaults are a 32 ms periodic Hann window with 50% overlap at 16 kHz.
    """

    window_length = attr.ib(default=512, converter=int, validator=_positive)
    hop = attr.ib(default=256, converter=int, validator=_positive)
    fft_size = attr.ib(converter=int, validator=_positive)
    window = attr.ib(default="hann")

    @fft_size.default
    def _fft_size(self):
        return self.window_length

    @hop.validator
    def _check_hop(self, attribute, value):
        if value > self.window_length:
            raise SignalError(
                f"hop ({value}) must not exceed window_length ({self.window_length})"
            )

    @fft_size.validator
    def _check_fft_size(self, attribute, value):
        if value < self.window_length:
            raise SignalError(
                f"fft_size ({value}) must be >= window_length ({self.window_length})"
            )

    @property
    def n_bins(self):
        """Number of one-sided frequency bins ``fft_size // 2 + 1``."""
        return self.fft_size // 2 + 1

    def n_frames(self, length):
        """Return the number of frames covering `length` samples."""
        return 1 + math.ceil((length - self.window_length) / self.hop)

    @property
    def is_cola(self):
        """True if the window/hop pair satisfies constant-overlap-add."""
        return _is_cola(self)

    def window_tensor(self, dtype=torch.float64, device=None):
        return torch.as_tensor(_window_array(self), dtype=dtype, device=device)


@functools.lru_cache(maxsize=None)
def _window_array(cfg):
    # get_window defaults to the periodic (DFT-even) form.
    try:
        return scipy.signal.get_window(cfg.window, cfg.window_length, fftbins=True)
    except ValueError as err:
        raise SignalError(f"Unknown window {cfg.window!r}: {err}") from err


@functools.lru_cache(maxsize=None)
def _is_cola(cfg):
    return bool(
        scipy.signal.check_COLA(
            _window_array(cfg), cfg.window_length, cfg.window_length - cfg.hop
        )
    )


@attr.s(frozen=True, eq=False)
class ComplexSpectrogram:
    """One-sided complex spectrogram.

    Parameters
    ----------
    values : torch.Tensor
       Complex tensor ``(channels, frames, bins)``.
    config : StftConfig
    sample_rate : int
    length : int
       Length of the analysed signal; synthesis returns this many samples.
    """

    values = attr.ib()
    config = attr.ib(factory=StftConfig)
    sample_rate = attr.ib(default=DEFAULT_SAMPLE_RATE, converter=int)
    length = attr.ib(default=None)

    def __attrs_post_init__(self):
        values = self.values
        if values.ndim != 3:
            raise SignalError(
                f"Spectrogram needs shape (channels, frames, bins), got {tuple(values.shape)}"
            )
        if values.shape[-1] != self.config.n_bins:
            raise SignalError(
                f"Spectrogram has {values.shape[-1]} bins but fft_size "
                f"{self.config.fft_size} needs {self.config.n_bins}"
            )
        if not torch.isfinite(torch.view_as_real(values)).all():
            raise SignalError("Spectrogram contains non-finite values")
        if self.length is None:
            cfg = self.config
            object.__setattr__(
                self, "length", (values.shape[1] - 1) * cfg.hop + cfg.window_length
            )

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]

    @property
    def bins(self):
        return self.values.shape[2]


@attr.s(frozen=True, eq=False)
class ContextWindow:
    """Frames ``t - tau ... t + tau`` of a spectrogram (zero outside the signal)."""

    t = attr.ib()
    tau = attr.ib()
    values = attr.ib()

    @property
    def center(self):
        """The slice of frame `t`."""
        return self.values[:, self.tau]


######################################################################
# Tensor-level transforms.  These are differentiable and batched over any
# leading dimensions.
def _overlap_add(frames, hop):
    """Overlap-add ``(..., T, W)`` frames with the given hop."""
    *lead, n_frames, width = frames.shape
    n = (n_frames - 1) * hop + width
    cols = frames.reshape(-1, n_frames, width).transpose(1, 2)
    out = F.fold(cols, output_size=(1, n), kernel_size=(1, width), stride=(1, hop))
    return out.reshape(*lead, n)


def stft_tensor(x, cfg):
    """Return the one-sided STFT of real `x` with shape ``(..., L)``.

    Returns
    -------
    X : torch.Tensor
       Complex tensor ``(..., T, F)``.
    """
    length = x.shape[-1]
    if length < cfg.window_length:
        raise SignalError(
            f"Signal of {length} samples is shorter than one window: "
            f"need at least {cfg.window_length} samples"
        )
    n_frames = cfg.n_frames(length)
    pad = (n_frames - 1) * cfg.hop + cfg.window_length - length
    if pad:
        x = F.pad(x, (0, pad))
    window = cfg.window_tensor(dtype=x.dtype, device=x.device)
    frames = x.unfold(-1, cfg.window_length, cfg.hop) * window
    return torch.fft.rfft(frames, n=cfg.fft_size, dim=-1)


def istft_tensor(X, cfg, length=None):
    """Return the real signal ``(..., L)`` synthesised from ``(..., T, F)`` `X`.

    Parameters
    ----------
    X : torch.Tensor
       Complex one-sided spectrogram.
    cfg : StftConfig
       Must satisfy constant-overlap-add.
    length : int, None
       Output length.  Defaults to the full overlap-added length.
    """
    if not cfg.is_cola:
        raise SignalError(
            f"STFT config {cfg} does not satisfy constant-overlap-add; "
            "cannot reconstruct"
        )
    width = cfg.window_length
    frames = torch.fft.irfft(X, n=cfg.fft_size, dim=-1)[..., :width]
    window = cfg.window_tensor(dtype=frames.dtype, device=frames.device)
    y = _overlap_add(frames * window, cfg.hop)
    envelope = _overlap_add((window ** 2).expand(X.shape[-2], width), cfg.hop)
    tiny = 1e-10 * envelope.max()
    y = y * torch.where(envelope > tiny, 1.0 / envelope.clamp_min(tiny), 0.0)
    if length is not None:
        y = y[..., :length]
    return y


######################################################################
# Operations
def stft(w, cfg=None):
    """Return the STFT of every channel of Waveform `w`.

    >>> w = Waveform(np.zeros(1024))
    >>> S = stft(w)
    >>> S.values.shape, bool((S.values == 0).all())
    (torch.Size([1, 3, 257]), True)
    """
    cfg = cfg or StftConfig()
    X = stft_tensor(torch.as_tensor(w.samples), cfg)
    return ComplexSpectrogram(
        values=X, config=cfg, sample_rate=w.sample_rate, length=w.length
    )


def istft(S):
    """Return the Waveform synthesised from spectrogram `S`."""
    y = istft_tensor(S.values, S.config, length=S.length)
    return Waveform(y.detach().cpu().numpy(), S.sample_rate)


def frame_context(S, t, tau):
    """Return the `ContextWindow` of `2*tau + 1` frames centered on frame `t`.

    Frames outside the spectrogram are zero.
    """
    n_frames = S.frames
    if not 0 <= t < n_frames:
        raise SignalError(f"Frame index t={t} out of range [0, {n_frames})")
    if tau < 0:
        raise SignalError(f"tau must be non-negative (got {tau})")
    values = S.values
    out = values.new_zeros((values.shape[0], 2 * tau + 1, values.shape[2]))
    lo, hi = max(0, t - tau), min(n_frames, t + tau + 1)
    out[:, lo - (t - tau) : hi - (t - tau)] = values[:, lo:hi]
    return ContextWindow(t=t, tau=tau, values=out)


def peak_normalize(w, peak=0.99):
    """Return `(w_normalized, gain)` with max absolute sample equal to `peak`.

    >>> w, gain = peak_normalize(Waveform([[0.5, -2.0], [1.0, 0.0]]))
    >>> gain
    0.495
    """
    max_abs = float(np.max(np.abs(w.samples)))
    if max_abs == 0:
        raise SignalError("Cannot peak-normalize an all-zero waveform")
    gain = peak / max_abs
    return w.scaled(gain), gain


######################################################################
# WAV files
def read_wav(path, sample_rate=None):
    """Read a WAV file as a Waveform.

    Parameters
    ----------
    path : str, Path
    sample_rate : int, None
       If given, the file's rate must match (no resampling is performed).
    """
    data, rate = soundfile.read(str(path), dtype="float64", always_2d=True)
    if sample_rate is not None and rate != sample_rate:
        raise SignalError(
            f"{path}: sample rate {rate} Hz does not match configured {sample_rate} Hz"
        )
    return Waveform(data.T, rate)


def write_wav(path, w, subtype="FLOAT"):
    """Write Waveform `w` as a WAV file.

    Parameters
    ----------
    subtype : str
       ``"FLOAT"`` (32-bit float, default) or ``"PCM_16"``.
    """
    if subtype not in ("FLOAT", "PCM_16"):
        raise SignalError(f"Unsupported WAV subtype {subtype!r}")
    soundfile.write(str(path), w.samples.T, w.sample_rate, subtype=subtype)
