"""
Objectives and Metrics
======================

SI-SDR
------
For estimate ``e`` and reference ``s``, ``alpha = <e, s> / |s|**2`` and::

    si_sdr = 10 log10(|alpha s|**2 / |e - alpha s|**2)

No mean removal is applied.  The reporting version (`si_sdr`) is exact and clips
the result to [-100, 100] dB, flagging clipped values; this also covers the
undefined zero-error and zero-projection cases.  The training version
(`si_sdr_tensor`) is differentiable and adds ``eps = 1e-8`` to both energies.

The training loss pairs the left estimate with the left-ear target and the right
estimate with the right-ear target; there is no search over assignments.

STOI
----
`stoi` wraps :func:`pystoi.stoi` (10 kHz resampling, 40 dB silent-frame removal,
15 third-octave bands from 150 Hz, 384 ms segments).  A segment whose estimate
has zero variance contributes zero correlation.

Reports
-------
`evaluate_dataset` scores every example of a manifest with a separator and with
the unprocessed baseline (the in-ear mixture channel of each side), and aggregates
the per-source means overall, by SNR, by T60 (0.1 s bins) and by condition
(``anechoic`` for T60 = 0, ``reverberant`` otherwise).
"""
from concurrent.futures import ProcessPoolExecutor
import json
import warnings

import attr
import numpy as np
import pystoi
import torch

from . import utils
from .dsp import StftConfig, Waveform, istft_tensor, stft_tensor
from .errors import EarsepError, MetricError
from .interfaces import ISeparator, implementer
from .scenes.dataset import load_example, manifest_records

__all__ = [
    "CLIP_DB",
    "si_sdr",
    "si_sdr_tensor",
    "loss",
    "stoi",
    "MetricReport",
    "aggregate",
    "Passthrough",
    "NetworkSeparator",
    "evaluate_example",
    "evaluate_dataset",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log
log_task = _LOGGER.log_task

CLIP_DB = 100.0
EPS = 1e-8
SIDES = ("left", "right")

# pystoi needs 30 frames of 256 samples with hop 128 at 10 kHz.
STOI_MIN_DURATION = (29 * 128 + 256) / 10000


def _as_1d(x, name):
    if isinstance(x, Waveform):
        if x.channels != 1:
            raise MetricError(f"{name} must be single-channel (got {x.channels} channels)")
        x = x.samples[0]
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise MetricError(f"{name} must be one-dimensional (got shape {x.shape})")
    return x


def si_sdr(estimate, reference, return_clipped=False):
    """Return the SI-SDR of `estimate` against `reference` in dB.

    Parameters
    ----------
    estimate, reference : Waveform or array
       Single-channel signals of equal length.
    return_clipped : bool
       If True, return `(value, clipped)`.

    >>> si_sdr([1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0])
    0.0
    >>> si_sdr([2.0, 0.0], [1.0, 0.0], return_clipped=True)
    (100.0, True)
    """
    e, s = _as_1d(estimate, "estimate"), _as_1d(reference, "reference")
    if e.shape != s.shape:
        raise MetricError(f"Length mismatch: estimate {len(e)} vs reference {len(s)}")
    s_energy = np.dot(s, s)
    if s_energy == 0:
        raise MetricError("SI-SDR is undefined for an all-zero reference")
    target = np.dot(e, s) / s_energy * s
    error = e - target
    num, den = np.dot(target, target), np.dot(error, error)
    if den == 0:
        value = CLIP_DB
    elif num == 0:
        value = -CLIP_DB
    else:
        value = 10 * np.log10(num / den)
    clipped = not -CLIP_DB < value < CLIP_DB
    value = float(np.clip(value, -CLIP_DB, CLIP_DB))
    return (value, clipped) if return_clipped else value


def si_sdr_tensor(estimate, reference, eps=EPS):
    """Return the smooth SI-SDR (dB) over the last axis of torch tensors."""
    if estimate.shape != reference.shape:
        raise MetricError(
            f"Shape mismatch: estimate {tuple(estimate.shape)} vs "
            f"reference {tuple(reference.shape)}"
        )
    dot = (estimate * reference).sum(-1, keepdim=True)
    s_energy = (reference ** 2).sum(-1, keepdim=True)
    target = dot / (s_energy + eps) * reference
    error = estimate - target
    ratio = ((target ** 2).sum(-1) + eps) / ((error ** 2).sum(-1) + eps)
    return 10 * torch.log10(ratio)


def loss(est_left, est_right, tgt_left, tgt_right, smooth=True):
    """Return ``-(si_sdr(left) + si_sdr(right)) / 2`` with fixed ear pairing.

    With ``smooth=True`` the inputs are ``(..., L)`` tensors and the result is the
    differentiable batch mean.  With ``smooth=False`` the clipped reporting SI-SDR is
    used on single examples.

    >>> loss([1.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 0.0], [1.0, 0.0, 0.0, 0.0],
    ...      smooth=False)
    -50.0
    """
    if smooth:
        values = si_sdr_tensor(est_left, tgt_left) + si_sdr_tensor(est_right, tgt_right)
        return -0.5 * values.mean()
    return -0.5 * (si_sdr(est_left, tgt_left) + si_sdr(est_right, tgt_right))


def stoi(estimate, reference, sample_rate=16000):
    """Return the STOI score of `estimate` against `reference`.

    >>> x = np.random.default_rng(0).standard_normal(16000)
    >>> round(stoi(x, x), 6)
    1.0
    """
    e, s = _as_1d(estimate, "estimate"), _as_1d(reference, "reference")
    if e.shape != s.shape:
        raise MetricError(f"Length mismatch: estimate {len(e)} vs reference {len(s)}")
    min_len = int(np.ceil(STOI_MIN_DURATION * sample_rate))
    if len(s) < min_len:
        raise MetricError(
            f"STOI needs at least {min_len} samples ({STOI_MIN_DURATION:.3f} s); "
            f"got {len(s)}"
        )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        score = pystoi.stoi(s, e, sample_rate, extended=False)
    if any("Not enough STFT frames" in str(_w.message) for _w in caught):
        raise MetricError("STOI: too few non-silent frames in the reference")
    return float(score)


######################################################################
# Separators
@implementer(ISeparator)
class Passthrough:
    """Unprocessed baseline: the in-ear mixture channel of each side."""

    name = "Unprocessed"

    def __init__(self, left_channel=0, right_channel=4):
        self.channels = (left_channel, right_channel)

    def separate(self, mixture):
        left, right = self.channels
        return mixture.channel(left), mixture.channel(right)


@implementer(ISeparator)
class NetworkSeparator:
    """Trained network wrapped for evaluation (eval mode, no gradients)."""

    def __init__(self, model, stft_config=None, name="Model"):
        self.model = model.eval()
        self.stft_config = stft_config or StftConfig()
        self.name = name

    def separate(self, mixture):
        param = next(self.model.parameters())
        x = torch.as_tensor(mixture.samples, dtype=param.dtype)
        with torch.no_grad():
            X = stft_tensor(x, self.stft_config)
            Y = self.model(X[None])[0]
            y = istft_tensor(Y, self.stft_config, length=mixture.length)
        y = y.double().numpy()
        return (Waveform(y[0:1], mixture.sample_rate), Waveform(y[1:2], mixture.sample_rate))


######################################################################
# Reports
def t60_bin(t60):
    """Return the report bin label of `t60`.

    >>> t60_bin(0.27), t60_bin(0.0)
    ('0.3', '0.0')
    """
    return f"{round(float(t60), 1):.1f}"


def snr_bin(snr_db):
    return "none" if snr_db is None else f"{float(snr_db):g}"


def condition(t60):
    return "anechoic" if t60 == 0 else "reverberant"


def _score(estimates, example, sample_rate, with_stoi):
    scores = {}
    for side, estimate in zip(SIDES, estimates):
        target = getattr(example, f"target_{side}")
        value, clipped = si_sdr(estimate, target, return_clipped=True)
        scores[side] = dict(
            si_sdr=value,
            si_sdr_clipped=clipped,
            stoi=stoi(estimate, target, sample_rate) if with_stoi else None,
        )
    return scores


def evaluate_example(record, separator=None, with_stoi=True):
    """Return the metric record of one manifest record."""
    out = dict(
        index=record.get("index"),
        split=record.get("split"),
        t60=record.get("t60"),
        snr_db=record.get("snr_db"),
        speakers=record.get("speakers"),
        model=None,
        unprocessed=None,
        si_sdri=None,
        error=None,
    )
    try:
        example = load_example(record)
        rate = example.mixture.sample_rate
        out["unprocessed"] = _score(
            Passthrough().separate(example.mixture), example, rate, with_stoi
        )
        if separator is not None and not isinstance(separator, Passthrough):
            out["model"] = _score(separator.separate(example.mixture), example, rate, with_stoi)
            out["si_sdri"] = {
                _s: out["model"][_s]["si_sdr"] - out["unprocessed"][_s]["si_sdr"]
                for _s in SIDES
            }
    except (EarsepError, OSError) as err:
        out["error"] = f"{type(err).__name__}: {err}"
    return out


def _mean(values):
    values = [_v for _v in values if _v is not None]
    return float(np.mean(values)) if values else None


def _stats(records):
    stats = dict(n=len(records))
    for key in ("unprocessed", "model"):
        if all(_r[key] is None for _r in records):
            stats[key] = None
            continue
        stats[key] = {
            _m: _mean(_r[key][_s][_m] for _r in records if _r[key] for _s in SIDES)
            for _m in ("si_sdr", "stoi")
        }
    stats["si_sdri"] = _mean(
        _r["si_sdri"][_s] for _r in records if _r["si_sdri"] for _s in SIDES
    )
    return stats


def _grouped(records, key):
    groups = {}
    for r in records:
        groups.setdefault(key(r), []).append(r)
    return {_k: _stats(_v) for _k, _v in groups.items()}


def aggregate(records):
    """Return the aggregates of successful metric `records`.

    Means are over both sources of every example in a group.
    """
    records = [_r for _r in records if _r["error"] is None]
    if not records:
        raise MetricError("No successfully evaluated examples to aggregate")
    return dict(
        overall=_stats(records),
        by_snr=_grouped(records, lambda _r: snr_bin(_r["snr_db"])),
        by_t60=_grouped(records, lambda _r: t60_bin(_r["t60"])),
        by_condition=_grouped(records, lambda _r: condition(_r["t60"])),
    )


@attr.s(frozen=True, eq=False)
class MetricReport:
    """Per-example metric records and their aggregates."""

    records = attr.ib(converter=list)
    aggregates = attr.ib()
    model_name = attr.ib(default=None)

    @classmethod
    def from_records(cls, records, model_name=None):
        return cls(records=records, aggregates=aggregate(records), model_name=model_name)

    @property
    def errors(self):
        return [_r for _r in self.records if _r["error"] is not None]

    def to_dict(self):
        return utils.to_jsonable(
            dict(model_name=self.model_name, aggregates=self.aggregates, records=self.records)
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
        return path

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            raise MetricError(f"Cannot read report {path}: {err}") from err
        if not d.get("records"):
            raise MetricError(f"Report {path} has no records")
        return cls(records=d["records"], aggregates=d["aggregates"], model_name=d["model_name"])


def _evaluate_job(job):
    return evaluate_example(*job)


def evaluate_dataset(manifest, separator=None, with_stoi=True, workers=1):
    """Return the `MetricReport` of `separator` on a manifest.

    Parameters
    ----------
    manifest : str or list
       Manifest path or already-read records.
    separator : ISeparator, None
       None (or `Passthrough`) reports only the unprocessed baseline.
    workers : int
       Number of processes; records are merged in example order.
    """
    records = manifest_records(manifest)
    if not records:
        raise MetricError(f"Manifest {manifest} is empty")
    name = None
    if separator is not None and not isinstance(separator, Passthrough):
        if not ISeparator.providedBy(separator):
            raise MetricError(f"{type(separator).__name__} does not provide ISeparator")
        name = separator.name
    jobs = [(_r, separator, with_stoi) for _r in records]
    with log_task(f"Evaluating {len(jobs)} examples"):
        if workers and workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_evaluate_job, jobs))
        else:
            results = [_evaluate_job(_j) for _j in jobs]
    for r in results:
        if r["error"]:
            _LOGGER.warning(f"Example {r['index']} failed: {r['error']}")
    return MetricReport.from_records(results, model_name=name)
