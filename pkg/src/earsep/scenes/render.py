"""
Scene Rendering
===============

Turns a `SceneSpec` (room, array, two talkers and an optional noise source) into a
`MixtureExample`: the 8-channel mixture and the two direct-path ear targets.

The talker at -60 degrees (listener's left) is the left-ear target and the talker at
+60 degrees the right-ear target.  Targets are rendered with the direct path only
(plus head shadow) at the in-ear microphone of their side, then scaled by the same
peak-normalization gain as the mixture.
"""
import attr
import numpy as np
import scipy.signal

from .. import utils
from ..dsp import Waveform, peak_normalize
from ..errors import SceneError
from .acoustics import ArrayGeometry, HeadShadow, RoomSpec, head_shadow_filter, rir_set

__all__ = [
    "SourceSpec",
    "SceneSpec",
    "MixtureExample",
    "scale_noise_to_snr",
    "render_source",
    "render_sources",
    "render_direct",
    "render_scene",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

TALKER_AZIMUTHS = {"left": -60.0, "right": 60.0}
SPEECH_DISTANCES = (1.0, 2.0)
NOISE_DISTANCES = (2.0, 5.0)


@attr.s(frozen=True, eq=False)
class SourceSpec:
    """One source in a scene.

    Parameters
    ----------
    kind : str
       ``"speech"`` or ``"noise"``.
    azimuth : float
       Degrees, positive to the listener's right.  Talkers sit at +-60.
    distance : float
       Meters from the head center.  Speech in [1, 2], noise in [2, 5].
    signal : Waveform
       Dry mono signal.
    label : str
       Speaker id or noise file name, recorded in the metadata.
    """

    kind = attr.ib(validator=attr.validators.in_(("speech", "noise")))
    azimuth = attr.ib(converter=float)
    distance = attr.ib(converter=float)
    signal = attr.ib()
    label = attr.ib(default="")

    def __attrs_post_init__(self):
        if self.kind == "speech":
            if self.azimuth not in TALKER_AZIMUTHS.values():
                raise SceneError(f"Talker azimuth must be +-60 degrees (got {self.azimuth})")
            lo, hi = SPEECH_DISTANCES
        else:
            if not -180 <= self.azimuth <= 180:
                raise SceneError(f"Noise azimuth must lie in [-180, 180] (got {self.azimuth})")
            lo, hi = NOISE_DISTANCES
        if not lo <= self.distance <= hi:
            raise SceneError(
                f"{self.kind} distance {self.distance} m outside [{lo}, {hi}] m"
            )
        if self.signal.channels != 1:
            raise SceneError(f"Source signals must be mono (got {self.signal.channels} ch)")

    @property
    def side(self):
        """Ear whose target this talker is (None for noise)."""
        if self.kind != "speech":
            return None
        return "left" if self.azimuth < 0 else "right"


@attr.s(frozen=True, eq=False)
class SceneSpec:
    """Everything needed to render one scene.

    Parameters
    ----------
    sources : [SourceSpec]
       Exactly one talker at -60 and one at +60 degrees, and at most one noise.
    snr_db : float, None
       Speech-to-noise ratio at the array.  Ignored without a noise source.
    seed : int
       Recorded in the metadata.  Rendering itself is deterministic.
    duration : float
       Seconds.  Signals are truncated to this length.
    """

    room = attr.ib(factory=RoomSpec)
    array = attr.ib(factory=ArrayGeometry)
    sources = attr.ib(factory=list, converter=list)
    snr_db = attr.ib(default=None)
    seed = attr.ib(default=0)
    shadow = attr.ib(factory=HeadShadow)
    duration = attr.ib(default=3.0, converter=float)
    sample_rate = attr.ib(default=16000, converter=int)
    noise_gain = attr.ib(default=None)

    def __attrs_post_init__(self):
        sides = sorted(_s.side for _s in self.talkers)
        if sides != ["left", "right"]:
            raise SceneError(
                "A scene needs one talker at -60 and one at +60 degrees "
                f"(got azimuths {[_s.azimuth for _s in self.talkers]})"
            )
        if len(self.sources) - 2 > 1:
            raise SceneError("A scene has at most one noise source")
        if self.noise is not None and self.snr_db is None and self.noise_gain is None:
            raise SceneError("snr_db is required when a noise source is present")

    @property
    def talkers(self):
        return [_s for _s in self.sources if _s.kind == "speech"]

    def talker(self, side):
        return next(_s for _s in self.talkers if _s.side == side)

    @property
    def noise(self):
        return next((_s for _s in self.sources if _s.kind == "noise"), None)

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))


@attr.s(frozen=True, eq=False)
class MixtureExample:
    """Rendered mixture and direct-path ear targets."""

    mixture = attr.ib()
    target_left = attr.ib()
    target_right = attr.ib()
    metadata = attr.ib(factory=dict)

    def __attrs_post_init__(self):
        waves = (self.mixture, self.target_left, self.target_right)
        if len({(_w.length, _w.sample_rate) for _w in waves}) != 1:
            raise SceneError("Mixture and targets must share length and sample rate")
        if self.mixture.channels != ArrayGeometry.n_mics:
            raise SceneError(f"Mixture must have 8 channels (got {self.mixture.channels})")


######################################################################
def _power(x):
    return float(np.mean(np.asarray(x, dtype=float) ** 2))


def scale_noise_to_snr(speech_mix, noise, snr_db):
    """Return the noise gain `g` giving ``10 log10(P_speech / (g**2 P_noise)) = snr_db``.

    Powers are averaged over all channels.

    >>> w = Waveform(np.ones((8, 4)))
    >>> round(float(scale_noise_to_snr(w, w, 20.0)), 12)
    0.1
    """
    p_speech, p_noise = _power(speech_mix.samples), _power(noise.samples)
    if p_speech == 0 or p_noise == 0:
        raise SceneError("Cannot set the SNR with a zero-power speech or noise signal")
    return np.sqrt(p_speech / p_noise * 10 ** (-snr_db / 10))


def _dry_signal(spec, source):
    signal = source.signal
    if signal.sample_rate != spec.sample_rate:
        raise SceneError(
            f"Source {source.label!r} has rate {signal.sample_rate} Hz, "
            f"scene uses {spec.sample_rate} Hz"
        )
    n = spec.n_samples
    if signal.length < n:
        raise SceneError(
            f"Source {source.label!r} has {signal.length} samples; "
            f"need at least {n} ({spec.duration} s)"
        )
    x = signal.samples[0, :n]
    if not np.any(x):
        raise SceneError(f"Source {source.label!r} is silent")
    return x


def _position(spec, source):
    return spec.array.source_position(source.azimuth, source.distance)


def _spatialize(spec, source, h, mics):
    """Return the ``(len(mics), n)`` render of `source` through filters `h`."""
    x = _dry_signal(spec, source)
    out = np.empty((len(mics), len(x)))
    sides = spec.array.sides
    for row, m in enumerate(mics):
        y = scipy.signal.fftconvolve(x, h[m])[: len(x)]
        shadow = head_shadow_filter(source.azimuth, sides[m], spec.shadow)
        out[row] = shadow.apply(y)
    return out


def render_source(spec, source, direct_path_only=False):
    """Return the ``(8, n)`` array render of one source (no SNR scaling)."""
    rirs = rir_set(
        spec.room,
        spec.array,
        _position(spec, source),
        sample_rate=spec.sample_rate,
        direct_path_only=direct_path_only,
    )
    return _spatialize(spec, source, rirs.h, range(spec.array.n_mics))


def render_direct(spec, source, mic):
    """Return the direct-path render of `source` at microphone index `mic`."""
    rirs = rir_set(
        spec.room,
        spec.array,
        _position(spec, source),
        sample_rate=spec.sample_rate,
        direct_path_only=True,
    )
    return _spatialize(spec, source, rirs.h, [mic])[0]


def render_sources(spec):
    """Return the pre-normalization components of the scene.

    Returns
    -------
    components : dict
       ``"left"`` and ``"right"``: 8-channel talker renders; ``"noise"``: unscaled
       noise render or None; ``"noise_gain"``: gain that sets the SNR (0 without
       noise).
    """
    components = {
        _side: render_source(spec, spec.talker(_side)) for _side in TALKER_AZIMUTHS
    }
    components["noise"], components["noise_gain"] = None, 0.0
    if spec.noise is not None:
        noise = render_source(spec, spec.noise)
        if spec.noise_gain is not None:
            gain = float(spec.noise_gain)
        else:
            speech = Waveform(components["left"] + components["right"], spec.sample_rate)
            gain = float(
                scale_noise_to_snr(speech, Waveform(noise, spec.sample_rate), spec.snr_db)
            )
        components["noise"], components["noise_gain"] = noise, gain
    return components


def render_scene(spec):
    """Render `spec` into a `MixtureExample`."""
    components = render_sources(spec)
    mix = components["left"] + components["right"]
    if components["noise"] is not None:
        mix = mix + components["noise_gain"] * components["noise"]
    mixture, gain = peak_normalize(Waveform(mix, spec.sample_rate), peak=0.99)

    targets = {}
    for side in TALKER_AZIMUTHS:
        mic = spec.array.in_ear_index[side]
        y = render_direct(spec, spec.talker(side), mic)
        targets[side] = Waveform(gain * y, spec.sample_rate)

    metadata = dict(
        seed=spec.seed,
        t60=spec.room.t60,
        snr_db=spec.snr_db if spec.noise is not None else None,
        sample_rate=spec.sample_rate,
        duration=spec.duration,
        distances={
            "left": spec.talker("left").distance,
            "right": spec.talker("right").distance,
            "noise": spec.noise.distance if spec.noise else None,
        },
        noise_azimuth=spec.noise.azimuth if spec.noise else None,
        speakers={
            "left": spec.talker("left").label,
            "right": spec.talker("right").label,
        },
        noise_label=spec.noise.label if spec.noise else None,
        noise_gain=components["noise_gain"],
        gain=gain,
    )
    return MixtureExample(
        mixture=mixture,
        target_left=targets["left"],
        target_right=targets["right"],
        metadata=metadata,
    )
