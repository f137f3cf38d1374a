"""
Acoustics
=========

Parametric room and head model used to spatialize sources: a shoebox
image-source room impulse response generator, a hearing-aid microphone array
around a spherical-ish head, and a single-pole head-shadow filter.

Coordinates
-----------
Room coordinates are in meters with the origin in a room corner.  The listener
looks along +x; +y points to the listener's left and +z up.  Azimuths are in
degrees, positive to the listener's right, so a source at +60 degrees lies on the
right-hand side.

Wall attenuation
----------------
For a requested T60 the total Sabine absorption is
``A = 24 ln(10) V / (c T60)``.  It is shared between the three wall pairs in
proportion to the room length along their normal, which gives a per-reflection
energy factor ``exp(-k L_i)`` for walls normal to axis ``i`` with
``k = 4 ln(10) / (c T60)``.  Summed over the surfaces this reproduces ``A``
exactly.  The decay rate along a ray then depends only on its direction, not on
the room shape, and the Schroeder decay of the generated responses stays within
a few percent of the requested T60 even in flat rooms.
"""
import functools
import itertools
import math

import attr
import numpy as np
import scipy.signal

from .. import utils
from ..errors import SceneError

try:
    import numexpr
except ImportError:
    numexpr = None

__all__ = [
    "RoomSpec",
    "ArrayGeometry",
    "HeadShadow",
    "ShadowFilter",
    "RirSet",
    "image_source_rir",
    "rir_set",
    "head_shadow_filter",
    "schroeder_t60",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

SIDES = ("left", "right")


def _vector3(value):
    value = np.asarray(value, dtype=float).ravel()
    if value.shape != (3,):
        raise SceneError(f"Expected 3 coordinates, got {value.tolist()}")
    return value


@attr.s(frozen=True, eq=False)
class RoomSpec:
    """Shoebox room.

    Parameters
    ----------
    dimensions : (float, float, float)
       Room size in meters.
    t60 : float
       Reverberation time in seconds.  Zero means anechoic.
    speed_of_sound : float
       In m/s.
    """

    dimensions = attr.ib(default=(12.0, 12.5, 3.0), converter=_vector3)
    t60 = attr.ib(default=0.0, converter=float)
    speed_of_sound = attr.ib(default=343.0, converter=float)

    @dimensions.validator
    def _check_dimensions(self, attribute, value):
        if np.any(value <= 0):
            raise SceneError(f"Room dimensions must be positive, got {value.tolist()}")

    @t60.validator
    def _check_t60(self, attribute, value):
        if not value >= 0:
            raise SceneError(f"t60 must be >= 0 (got {value})")

    @speed_of_sound.validator
    def _check_c(self, attribute, value):
        if not value > 0:
            raise SceneError(f"speed_of_sound must be positive (got {value})")

    @property
    def anechoic(self):
        return self.t60 == 0

    def with_t60(self, t60):
        return attr.evolve(self, t60=t60)

    def contains(self, position):
        """Return True if `position` lies strictly inside the room."""
        position = np.asarray(position, dtype=float)
        return bool(np.all(position > 0) and np.all(position < self.dimensions))

    def reflection_amplitudes(self):
        """Return the per-reflection amplitude factor for each wall pair (x, y, z)."""
        if self.anechoic:
            return np.zeros(3)
        k = 4 * math.log(10) / (self.speed_of_sound * self.t60)
        return np.exp(-k * self.dimensions / 2)


@attr.s(frozen=True, eq=False)
class ArrayGeometry:
    """Eight-microphone binaural hearing-aid array.

    Channels 0-3 sit at the left ear and 4-7 at the right ear.  In each group
    the first channel is the in-ear microphone on the interaural axis at
    ``+-head_radius``; the three external microphones follow, spaced
    `external_spacing` front-to-back (front first) and `external_height` above the
    ear canal.  The two groups are mirror images about the median plane.
    """

    listener_position = attr.ib(default=(5.6, 6.5, 1.5), converter=_vector3)
    head_radius = attr.ib(default=0.0875, converter=float)
    external_spacing = attr.ib(default=0.01, converter=float)
    external_height = attr.ib(default=0.01, converter=float)

    n_mics = 8
    in_ear_index = {"left": 0, "right": 4}

    @head_radius.validator
    def _check_radius(self, attribute, value):
        if not value > 0:
            raise SceneError(f"head_radius must be positive (got {value})")

    @property
    def sides(self):
        """Side of each channel."""
        return ("left",) * 4 + ("right",) * 4

    def channels(self, side):
        """Return the channel indices of `side`."""
        start = 0 if side == "left" else 4
        return list(range(start, start + 4))

    def mic_offsets(self):
        """Return the ``(8, 3)`` mic positions relative to the head center."""
        r, dx, dz = self.head_radius, self.external_spacing, self.external_height
        left = [(0.0, r, 0.0), (dx, r, dz), (0.0, r, dz), (-dx, r, dz)]
        right = [(_x, -_y, _z) for (_x, _y, _z) in left]
        return np.asarray(left + right)

    def mic_positions(self):
        """Return the ``(8, 3)`` absolute mic positions in the room."""
        return self.listener_position + self.mic_offsets()

    def source_position(self, azimuth, distance):
        """Return the room position of a source at `azimuth` (degrees) and `distance`."""
        phi = math.radians(azimuth)
        direction = np.array([math.cos(phi), -math.sin(phi), 0.0])
        return self.listener_position + distance * direction


@attr.s(frozen=True)
class HeadShadow:
    """Parameters of the head-shadow low-pass.

    The pole of the single-pole low-pass is ``p = s * exp(-2 pi min_cutoff_hz / fs)``
    where ``s = max(0, sin(azimuth))`` for the left ear and
    ``max(0, -sin(azimuth))`` for the right ear.  Ipsilateral sources (``s = 0``)
    pass unfiltered and the cutoff falls smoothly towards `min_cutoff_hz` as the
    source moves to the far side of the head.
    """

    min_cutoff_hz = attr.ib(default=800.0, converter=float)
    sample_rate = attr.ib(default=16000, converter=int)
    enabled = attr.ib(default=True, converter=bool)

    @min_cutoff_hz.validator
    def _check_cutoff(self, attribute, value):
        if not 0 < value < self.sample_rate / 2:
            raise SceneError(f"min_cutoff_hz must lie in (0, fs/2) (got {value})")


@attr.s(frozen=True, eq=False)
class ShadowFilter:
    """IIR filter ``b/a`` applied along the last axis."""

    b = attr.ib(converter=np.asarray)
    a = attr.ib(converter=np.asarray)

    @property
    def is_identity(self):
        return len(self.b) == 1 and len(self.a) == 1 and self.b[0] == self.a[0]

    def apply(self, x):
        if self.is_identity:
            return np.array(x, dtype=float)
        return scipy.signal.lfilter(self.b, self.a, x, axis=-1)

    def response(self, freqs, sample_rate):
        """Return the complex frequency response at `freqs` (Hz)."""
        _w, h = scipy.signal.freqz(self.b, self.a, worN=np.asarray(freqs), fs=sample_rate)
        return h


@attr.s(frozen=True, eq=False)
class RirSet:
    """Impulse responses from one source position to every microphone.

    Attributes
    ----------
    h : array
       ``(n_mics, length)`` filters.
    direct_path_only : bool
    """

    h = attr.ib()
    direct_path_only = attr.ib(default=False)

    def __attrs_post_init__(self):
        if not np.all(np.isfinite(self.h)):
            raise SceneError("RIR contains non-finite taps")
        if np.any(np.all(self.h == 0, axis=-1)):
            raise SceneError("RIR set contains an all-zero filter")


######################################################################
# Image-source model
@functools.lru_cache(maxsize=None)
def _image_lattice(n_x, n_y, n_z):
    """Return the ``(N, 3)`` lattice indices `r` and mirror flags `p` of all images."""
    r = np.array(
        list(
            itertools.product(
                range(-n_x, n_x + 1), range(-n_y, n_y + 1), range(-n_z, n_z + 1)
            )
        )
    )
    p = np.array(list(itertools.product([0, 1], repeat=3)))
    r = np.repeat(r, len(p), axis=0)
    p = np.tile(p, (len(r) // len(p), 1))
    return r, p


def _sinc_kernel(t, half_width, lowpass):
    """Hann-windowed sinc fractional-delay taps at offsets `t` (samples)."""
    if numexpr:
        pi, hw = np.pi, float(half_width)
        lowpass = float(lowpass)
        return numexpr.evaluate(
            "where(abs(t) <= hw, 0.5*(1 + cos(pi*t/hw)), 0)"
            "* where(t == 0, lowpass, sin(pi*lowpass*t)/(pi*t))"
        )
    window = np.where(np.abs(t) <= half_width, 0.5 * (1 + np.cos(np.pi * t / half_width)), 0)
    return window * lowpass * np.sinc(lowpass * t)


def image_source_rir(
    room,
    src,
    mic,
    sample_rate=16000,
    horizon=None,
    max_order=None,
    half_width=20,
    lowpass=1.0,
):
    """Return the shoebox image-source impulse response from `src` to `mic`.

    Each image contributes ``prod(beta_i**n_i) / d`` at delay ``d / c``, placed with a
    Hann-windowed sinc fractional delay of ``2 * half_width + 1`` taps.  With
    ``room.t60 == 0`` only the direct path is generated.

    Parameters
    ----------
    room : RoomSpec
    src : (3,) array
       Source position.
    mic : (3,) or (M, 3) array
       Microphone position(s).
    sample_rate : int
    horizon : float, None
       Length of the response in seconds.  Defaults to ``t60 + 50 ms`` (and just
       long enough for the direct path when anechoic).
    max_order : int, None
       Optional cap on the number of reflections per image.
    half_width : int
       Half-width of the fractional-delay kernel in samples.
    lowpass : float
       Kernel cutoff as a fraction of Nyquist.  1.0 gives an exact unit pulse at
       integer delays.

    Returns
    -------
    h : array
       ``(length,)`` for a single mic or ``(M, length)``.
    """
    src = _vector3(src)
    mics = np.asarray(mic, dtype=float)
    single = mics.ndim == 1
    mics = np.atleast_2d(mics)
    for name, pos in [("source", src)] + [("microphone", _m) for _m in mics]:
        if not room.contains(pos):
            raise SceneError(
                f"{name} position {np.round(pos, 4).tolist()} is outside the room "
                f"{room.dimensions.tolist()}"
            )
    if max_order is not None and max_order < 0:
        raise SceneError(f"max_order must be >= 0 (got {max_order})")

    c = room.speed_of_sound
    direct = np.linalg.norm(mics - src, axis=1).max() / c
    if room.anechoic:
        max_order = 0
    if horizon is None:
        horizon = room.t60 + 0.05 if not room.anechoic else direct
    horizon = max(horizon, direct)
    n_taps = int(math.ceil(horizon * sample_rate)) + half_width + 1

    dims = room.dimensions
    if max_order == 0:
        r, p = np.zeros((1, 3), dtype=int), np.zeros((1, 3), dtype=int)
    else:
        n_xyz = np.ceil(horizon * c / (2 * dims)).astype(int) + 1
        r, p = _image_lattice(*n_xyz)
    images = (1 - 2 * p) * src + 2 * r * dims
    orders = np.abs(r - p) + np.abs(r)
    keep = np.ones(len(images), dtype=bool)
    if max_order is not None:
        keep &= orders.sum(axis=1) <= max_order
    images, orders = images[keep], orders[keep]
    if max_order == 0:
        gains = np.ones(len(images))
    else:
        gains = np.prod(room.reflection_amplitudes() ** orders, axis=1)

    offsets = np.arange(-half_width, half_width + 1)
    h = np.zeros((len(mics), n_taps))
    for m, mic_pos in enumerate(mics):
        d = np.linalg.norm(images - mic_pos, axis=1)
        delay = d / c * sample_rate
        ok = (delay <= horizon * sample_rate) & (gains > 0)
        delay, amp = delay[ok], gains[ok] / d[ok]
        n = np.floor(delay).astype(int)[:, None] + offsets
        t = n - delay[:, None]
        taps = amp[:, None] * _sinc_kernel(t, half_width, lowpass)
        valid = (n >= 0) & (n < n_taps)
        h[m] = np.bincount(n[valid], weights=taps[valid], minlength=n_taps)
    return h[0] if single else h


def rir_set(room, array, src, sample_rate=16000, direct_path_only=False, **kw):
    """Return the `RirSet` from source position `src` to all mics of `array`."""
    if direct_path_only:
        room = room.with_t60(0.0)
    h = image_source_rir(room, src, array.mic_positions(), sample_rate=sample_rate, **kw)
    return RirSet(h=h, direct_path_only=direct_path_only)


######################################################################
# Head shadow
def head_shadow_filter(azimuth, mic_side, shadow=None):
    """Return the `ShadowFilter` for a source at `azimuth` seen from `mic_side`.

    >>> head_shadow_filter(0.0, "left").is_identity
    True
    >>> head_shadow_filter(-60.0, "left").is_identity
    True
    >>> head_shadow_filter(60.0, "left").is_identity
    False
    """
    if not -180 <= azimuth <= 180:
        raise SceneError(f"azimuth must lie in [-180, 180] (got {azimuth})")
    if mic_side not in SIDES:
        raise SceneError(f"mic_side must be one of {SIDES} (got {mic_side!r})")
    shadow = shadow or HeadShadow()
    sign = 1.0 if mic_side == "left" else -1.0
    s = max(0.0, sign * math.sin(math.radians(azimuth)))
    if not shadow.enabled or s == 0:
        return ShadowFilter(b=[1.0], a=[1.0])
    pole = s * math.exp(-2 * math.pi * shadow.min_cutoff_hz / shadow.sample_rate)
    return ShadowFilter(b=[1 - pole], a=[1.0, -pole])


######################################################################
# Analysis
def schroeder_t60(h, sample_rate=16000, fit_db=(-5.0, -25.0)):
    """Return the T60 estimated from the Schroeder decay of impulse response(s) `h`.

    The energy-decay curve is the backward integral of ``h**2`` (summed over
    channels if `h` is 2D).  A straight line is fitted to the curve between the
    levels in `fit_db` and extrapolated to -60 dB.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    energy = (h ** 2).sum(axis=0)
    edc = np.cumsum(energy[::-1])[::-1]
    if edc[0] <= 0:
        raise SceneError("Cannot estimate T60 of an all-zero response")
    with np.errstate(divide="ignore"):
        edc_db = 10 * np.log10(edc / edc[0])
    hi, lo = fit_db
    inds = np.nonzero((edc_db <= hi) & (edc_db >= lo))[0]
    if len(inds) < 2:
        raise SceneError(f"Response does not decay through {fit_db} dB")
    t = np.arange(len(edc_db)) / sample_rate
    slope, _intercept = np.polyfit(t[inds], edc_db[inds], 1)
    return -60.0 / slope
