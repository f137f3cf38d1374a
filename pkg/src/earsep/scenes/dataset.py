"""
Datasets
========

Builds train/val/test splits of rendered scenes from a speech corpus.

Layout of a dataset directory::

    train.jsonl  val.jsonl  test.jsonl
    train/000000_mix.wav  train/000000_left.wav  train/000000_right.wav
    ...

Each manifest line is one example: the scene metadata plus file paths relative to
the dataset directory.  Every example draws from its own RNG stream derived from
``(seed, split, index)``, so the output does not depend on the order in which
examples are rendered or on the number of workers.
"""
from concurrent.futures import ProcessPoolExecutor
import glob
import itertools
import json
import os.path
import shutil

import attr
import numpy as np

from .. import utils
from ..config import param
from ..dsp import Waveform, read_wav, write_wav
from ..errors import DatasetError
from .acoustics import ArrayGeometry, HeadShadow, RoomSpec
from .render import (
    NOISE_DISTANCES,
    SPEECH_DISTANCES,
    TALKER_AZIMUTHS,
    MixtureExample,
    SceneSpec,
    SourceSpec,
    render_scene,
)
from .testing import noise_like

__all__ = [
    "Corpus",
    "SceneGrid",
    "SPLITS",
    "split_speakers",
    "draw_pairs",
    "make_scene",
    "build_dataset",
    "read_manifest",
    "manifest_records",
    "load_example",
    "manifest_digest",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log
log_task = _LOGGER.log_task

SPLITS = ("train", "val", "test")

# Stream keys for the draws that are shared by a whole split.
_SPEAKER_SPLIT_KEY = 1000
_PAIRS_KEY = 1001


@attr.s(frozen=True, eq=False)
class Corpus:
    """Dry source recordings.

    Attributes
    ----------
    speech : dict
       Speaker id to a list of mono WAV paths.
    noise : list
       Noise WAV paths.  If empty, synthetic noise is generated per example.
    """

    speech = attr.ib(factory=dict)
    noise = attr.ib(factory=list)

    @classmethod
    def from_directory(cls, speech_dir, noise_dir=None):
        """Return the corpus in `speech_dir` (one subdirectory per speaker)."""
        speech_dir = utils.process_path(speech_dir)
        if not os.path.isdir(speech_dir):
            raise DatasetError(f"Speech directory {speech_dir} does not exist")
        speech = {}
        for spk_dir in sorted(glob.glob(os.path.join(speech_dir, "*"))):
            files = sorted(glob.glob(os.path.join(spk_dir, "*.wav")))
            if os.path.isdir(spk_dir) and files:
                speech[os.path.basename(spk_dir)] = files
        noise = []
        if noise_dir:
            noise = sorted(glob.glob(os.path.join(utils.process_path(noise_dir), "*.wav")))
        return cls(speech=speech, noise=noise)

    @property
    def speakers(self):
        return sorted(self.speech)


def _pair(value):
    value = tuple(float(_v) for _v in value)
    if len(value) != 2 or value[0] > value[1]:
        raise DatasetError(f"Expected a range (lo, hi) with lo <= hi, got {value}")
    return value


def _optional_pair(value):
    return None if value is None else _pair(value)


@attr.s(frozen=True)
class SceneGrid:
    """Acoustic conditions and split sizes of a dataset."""

    t60 = param((0.0, 0.3, 0.6), "T60 values (s) cycled over examples; 0 = anechoic.")
    t60_range = param(
        None,
        "If set, T60 is drawn uniformly from this (lo, hi) range instead.",
        kind="?floats",
        converter=_optional_pair,
    )
    snr = param((-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0), "SNR values (dB) cycled over examples.")
    duration = param(3.0, "Example length in seconds.")
    train = param(12, "Number of training examples.")
    val = param(4, "Number of validation examples.")
    test = param(4, "Number of test examples.")
    unique_pairs = param(True, "Require unique unordered speaker pairs within a split.")
    speech_distance = param(SPEECH_DISTANCES, "Talker distance range (m).", converter=_pair)
    noise_distance = param(NOISE_DISTANCES, "Noise distance range (m).", converter=_pair)
    noise_exclusion = param(5.0, "Noise azimuths within this many degrees of +-60 are redrawn.")
    workers = param(1, "Number of rendering processes.")

    def __attrs_post_init__(self):
        if not self.t60 and self.t60_range is None:
            raise DatasetError("t60 must list at least one value")
        if any(_t < 0 for _t in self.t60) or (self.t60_range and self.t60_range[0] < 0):
            raise DatasetError("t60 values must be >= 0")
        if not self.snr:
            raise DatasetError("snr must list at least one value")
        for name in SPLITS:
            if getattr(self, name) < 0:
                raise DatasetError(f"{name} count must be >= 0")
        if self.duration <= 0:
            raise DatasetError("duration must be positive")
        lo, hi = self.speech_distance
        if lo < SPEECH_DISTANCES[0] or hi > SPEECH_DISTANCES[1]:
            raise DatasetError(f"speech_distance must lie within {SPEECH_DISTANCES}")
        lo, hi = self.noise_distance
        if lo < NOISE_DISTANCES[0] or hi > NOISE_DISTANCES[1]:
            raise DatasetError(f"noise_distance must lie within {NOISE_DISTANCES}")

    def count(self, split):
        return getattr(self, split)

    def conditions(self, index, rng):
        """Return `(t60, snr_db)` of example `index`.

        T60 cycles fastest, so the first ``len(t60) * len(snr)`` examples cover the
        whole grid.
        """
        n_t60 = len(self.t60)
        if self.t60_range is not None:
            t60 = float(rng.uniform(*self.t60_range))
            n_t60 = 1
        else:
            t60 = float(self.t60[index % n_t60])
        snr = float(self.snr[(index // n_t60) % len(self.snr)])
        return t60, snr


######################################################################
# Speakers and pairs
def split_speakers(speakers, grid, seed):
    """Return ``{split: [speaker, ...]}`` with disjoint speaker sets.

    Every split with examples gets at least two speakers; the rest are shared
    out in proportion to the example counts.
    """
    splits = [_s for _s in SPLITS if grid.count(_s) > 0]
    speakers = sorted(speakers)
    if len(speakers) < 2 * len(splits):
        raise DatasetError(
            f"Need at least {2 * len(splits)} distinct speakers for splits {splits} "
            f"(got {len(speakers)})"
        )
    rng = utils.derive_rng(seed, _SPEAKER_SPLIT_KEY)
    order = [speakers[_i] for _i in rng.permutation(len(speakers))]
    total = sum(grid.count(_s) for _s in splits)
    sizes = {_s: 2 for _s in splits}
    spare = len(speakers) - 2 * len(splits)
    for s in splits[1:]:
        extra = min(spare, int(spare * grid.count(s) / total))
        sizes[s] += extra
    sizes[splits[0]] = len(speakers) - sum(sizes[_s] for _s in splits[1:])
    result, start = {}, 0
    for s in SPLITS:
        n = sizes.get(s, 0)
        result[s] = sorted(order[start : start + n])
        start += n
    return result


def draw_pairs(speakers, count, rng, unique=True):
    """Return `count` unordered speaker pairs drawn from `speakers`.

    >>> draw_pairs(["a", "b"], 1, np.random.default_rng(0))
    [('a', 'b')]
    """
    combos = list(itertools.combinations(sorted(speakers), 2))
    if not combos and count:
        raise DatasetError("Need at least 2 distinct speakers to form a pair")
    if unique:
        if count > len(combos):
            raise DatasetError(
                f"Cannot draw {count} unique speaker pairs from {len(speakers)} "
                f"speakers ({len(combos)} pairs available); add speakers or allow "
                "repeated pairs"
            )
        picks = rng.choice(len(combos), size=count, replace=False)
    else:
        picks = rng.integers(0, len(combos), size=count)
    return [combos[_i] for _i in picks]


######################################################################
# Scenes
def _excerpt(path, n, rng, sample_rate):
    w = read_wav(path, sample_rate=sample_rate)
    if w.channels != 1:
        raise DatasetError(f"{path}: expected a mono file (got {w.channels} channels)")
    if w.length < n:
        raise DatasetError(f"{path}: {w.length} samples is shorter than the {n} needed")
    start = int(rng.integers(0, w.length - n + 1))
    return Waveform(w.samples[:, start : start + n], sample_rate), start


def _noise_azimuth(rng, exclusion):
    while True:
        azimuth = float(rng.uniform(-180.0, 180.0))
        if all(abs(azimuth - _a) >= exclusion for _a in TALKER_AZIMUTHS.values()):
            return azimuth


def make_scene(
    corpus,
    grid,
    pair,
    split_index,
    index,
    seed,
    room=None,
    array=None,
    shadow=None,
    sample_rate=16000,
):
    """Return `(spec, sources)` for example `index` of split number `split_index`.

    `sources` records which files and offsets were used.
    """
    rng = utils.derive_rng(seed, split_index, index)
    room, array = room or RoomSpec(), array or ArrayGeometry()
    t60, snr = grid.conditions(index, rng)
    n = int(round(grid.duration * sample_rate))

    left, right = pair if rng.random() < 0.5 else pair[::-1]
    sources, used = [], {}
    for side, speaker in (("left", left), ("right", right)):
        path = corpus.speech[speaker][int(rng.integers(len(corpus.speech[speaker])))]
        signal, start = _excerpt(path, n, rng, sample_rate)
        distance = float(rng.uniform(*grid.speech_distance))
        sources.append(
            SourceSpec("speech", TALKER_AZIMUTHS[side], distance, signal, label=speaker)
        )
        used[side] = dict(file=path, offset=start)

    azimuth = _noise_azimuth(rng, grid.noise_exclusion)
    distance = float(rng.uniform(*grid.noise_distance))
    if corpus.noise:
        path = corpus.noise[int(rng.integers(len(corpus.noise)))]
        signal, start = _excerpt(path, n, rng, sample_rate)
        label = os.path.basename(path)
        used["noise"] = dict(file=path, offset=start)
    else:
        signal, label = noise_like(rng, grid.duration, sample_rate), "synthetic"
        used["noise"] = None
    sources.append(SourceSpec("noise", azimuth, distance, signal, label=label))

    spec = SceneSpec(
        room=room.with_t60(t60),
        array=array,
        sources=sources,
        snr_db=snr,
        seed=seed,
        shadow=shadow or HeadShadow(sample_rate=sample_rate),
        duration=grid.duration,
        sample_rate=sample_rate,
    )
    return spec, used


def _render_example(job):
    """Render and write one example; return its manifest record."""
    (corpus, grid, pair, split, index, seed, room, array, shadow, sample_rate, out_dir) = job
    split_index = SPLITS.index(split)
    spec, used = make_scene(
        corpus, grid, pair, split_index, index, seed, room, array, shadow, sample_rate
    )
    example = render_scene(spec)
    names = {}
    for key, w in [
        ("mixture", example.mixture),
        ("target_left", example.target_left),
        ("target_right", example.target_right),
    ]:
        suffix = {"mixture": "mix", "target_left": "left", "target_right": "right"}[key]
        names[key] = f"{split}/{index:06d}_{suffix}.wav"
        write_wav(os.path.join(out_dir, names[key]), w)
    record = dict(index=index, split=split, split_index=split_index)
    record.update(example.metadata)
    record["sources"] = {
        _k: None if _v is None else dict(_v, file=os.path.relpath(_v["file"], out_dir))
        for _k, _v in used.items()
    }
    record.update(names)
    return utils.to_jsonable(record)


def build_dataset(
    corpus,
    grid,
    out_dir,
    seed=0,
    room=None,
    array=None,
    shadow=None,
    sample_rate=16000,
    overwrite=False,
    workers=None,
):
    """Render all splits of `grid` into `out_dir`.

    Returns
    -------
    manifests : dict
       Split name to manifest path (only splits with examples).
    """
    workers = grid.workers if workers is None else workers
    speakers = corpus.speakers
    if len(speakers) < 2:
        raise DatasetError(f"Need at least 2 distinct speakers (got {len(speakers)})")
    out_dir = utils.process_path(out_dir)
    splits = [_s for _s in SPLITS if grid.count(_s) > 0]
    existing = [_s for _s in splits if os.path.exists(os.path.join(out_dir, f"{_s}.jsonl"))]
    if existing and not overwrite:
        raise DatasetError(
            f"Dataset in {out_dir} already has splits {existing}; pass overwrite to replace"
        )
    by_split = split_speakers(speakers, grid, seed)

    manifests = {}
    for split in splits:
        split_dir = os.path.join(out_dir, split)
        if os.path.exists(split_dir):
            shutil.rmtree(split_dir)
        os.makedirs(split_dir)
        rng = utils.derive_rng(seed, _PAIRS_KEY, SPLITS.index(split))
        pairs = draw_pairs(by_split[split], grid.count(split), rng, unique=grid.unique_pairs)
        jobs = [
            (corpus, grid, pair, split, i, seed, room, array, shadow, sample_rate, out_dir)
            for i, pair in enumerate(pairs)
        ]
        with log_task(f"Rendering {len(jobs)} {split} examples"):
            if workers and workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    records = list(pool.map(_render_example, jobs))
            else:
                records = [_render_example(_job) for _job in jobs]
        records.sort(key=lambda _r: _r["index"])
        manifest = os.path.join(out_dir, f"{split}.jsonl")
        with open(manifest, "w") as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        manifests[split] = manifest
    return manifests


######################################################################
# Manifests
def read_manifest(path):
    """Return the records of the JSONL manifest at `path`.

    Each record gains a ``"base_dir"`` entry (the manifest's directory) used to
    resolve its relative audio paths.
    """
    path = utils.process_path(path)
    if not os.path.exists(path):
        raise DatasetError(f"Manifest {path} does not exist")
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {err}") from err
            record["base_dir"] = os.path.dirname(path)
            records.append(record)
    return records


def manifest_records(manifest):
    """Return the records of `manifest`, a path or an already-read list of records."""
    if isinstance(manifest, (str, os.PathLike)):
        return read_manifest(manifest)
    return list(manifest)


def load_example(record, sample_rate=None):
    """Return the `MixtureExample` of a manifest record."""
    base = record.get("base_dir", ".")
    waves = {}
    for key in ("mixture", "target_left", "target_right"):
        path = os.path.join(base, record[key])
        if not os.path.exists(path):
            raise DatasetError(f"Missing audio file {path}")
        waves[key] = read_wav(path, sample_rate=sample_rate)
    metadata = {_k: _v for _k, _v in record.items() if _k not in waves and _k != "base_dir"}
    return MixtureExample(metadata=metadata, **waves)


def manifest_digest(*paths):
    """Return the sha256 digest of the manifest files."""
    return utils.file_digest(*paths)
