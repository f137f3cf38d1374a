"""
Testing
=======

Synthetic stand-ins for speech and noise recordings so the whole pipeline runs
without external data.

`speech_like` produces a harmonic complex with a gliding pitch and a syllable-rate
amplitude envelope: broadband, non-stationary, and distinct per speaker (each
speaker has its own pitch range and formant-like spectral tilt).  `noise_like`
produces low-pass tinted Gaussian noise.
"""
import os.path

import numpy as np
import scipy.signal

from .. import utils
from ..dsp import Waveform, write_wav

__all__ = ["speech_like", "noise_like", "write_synthetic_corpus"]

_LOGGER = utils.Logger(__name__)
log_task = _LOGGER.log_task

RMS = 0.05


def _normalize(x, rms=RMS):
    return x * (rms / np.sqrt(np.mean(x ** 2)))


def speech_like(rng, duration=3.0, sample_rate=16000, f0=None, tilt=None):
    """Return a mono speech-like Waveform.

    Parameters
    ----------
    rng : numpy.random.Generator
    duration : float
       Seconds.
    f0 : float, None
       Mean pitch in Hz (drawn from [90, 250] if None).
    tilt : float, None
       Harmonic amplitude roll-off exponent (drawn from [0.7, 1.5] if None).

    >>> w = speech_like(np.random.default_rng(1), duration=0.5)
    >>> w.samples.shape
    (1, 8000)
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(90, 250) if f0 is None else f0
    tilt = rng.uniform(0.7, 1.5) if tilt is None else tilt

    # Slow pitch glide plus vibrato
    glide = 1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * glide) / sample_rate
    n_harmonics = int(min(40, 0.45 * sample_rate / (1.2 * f0)))
    x = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        x += k ** (-tilt) * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # Syllable-rate envelope, active about 60% of the time
    rate = rng.uniform(3.0, 5.0)
    envelope = np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) + 0.4
    envelope = np.clip(envelope / 1.4, 0, None)
    envelope = envelope ** 0.5 * (1 + 0.5 * rng.standard_normal() * np.sin(2 * np.pi * 0.7 * t))
    envelope = np.clip(envelope, 0, None) + 1e-3
    return Waveform(_normalize(x * envelope), sample_rate)


def noise_like(rng, duration=3.0, sample_rate=16000, color=None):
    """Return mono Gaussian noise tinted by a one-pole low-pass with pole `color`."""
    n = int(round(duration * sample_rate))
    color = rng.uniform(0.0, 0.9) if color is None else color
    x = scipy.signal.lfilter([1.0], [1.0, -color], rng.standard_normal(n))
    return Waveform(_normalize(x), sample_rate)


def write_synthetic_corpus(
    directory,
    n_speakers=16,
    utterances_per_speaker=2,
    n_noises=4,
    duration=3.0,
    sample_rate=16000,
    seed=0,
):
    """Write a speech-like corpus to `directory` and return its `Corpus`.

    Layout::

        directory/speech/spk00/utt00.wav
        directory/noise/noise00.wav
    """
    from .dataset import Corpus

    with log_task(f"Writing synthetic corpus ({n_speakers} speakers) to {directory}"):
        for s in range(n_speakers):
            rng = utils.derive_rng(seed, 0, s)
            f0, tilt = rng.uniform(90, 250), rng.uniform(0.7, 1.5)
            spk_dir = os.path.join(directory, "speech", f"spk{s:02d}")
            os.makedirs(spk_dir, exist_ok=True)
            for u in range(utterances_per_speaker):
                w = speech_like(rng, duration, sample_rate, f0=f0, tilt=tilt)
                write_wav(os.path.join(spk_dir, f"utt{u:02d}.wav"), w)
        noise_dir = os.path.join(directory, "noise")
        os.makedirs(noise_dir, exist_ok=True)
        for k in range(n_noises):
            w = noise_like(utils.derive_rng(seed, 1, k), duration, sample_rate)
            write_wav(os.path.join(noise_dir, f"noise{k:02d}.wav"), w)
    return Corpus.from_directory(
        os.path.join(directory, "speech"), os.path.join(directory, "noise")
    )
