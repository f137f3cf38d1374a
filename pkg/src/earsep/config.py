"""Configuration files.

Options are read from INI files with one section per component::

    [earsep]
    seed = 0
    sample_rate = 16000

    [room]
    dimensions = 12, 12.5, 3

    [array]
    listener_position = 5.6, 6.5, 1.5
    head_radius = 0.0875

    [shadow]
    min_cutoff_hz = 800

    [grid]
    t60 = 0, 0.3, 0.6
    snr = -10, -5, 0, 5, 10, 15, 20
    duration = 3.0
    train = 12
    val = 4
    test = 4

    [corpus]
    speech_dir = ~/data/speech

    [stft]
    window_length = 512
    hop = 256

    [model]
    tau = 2

    [train]
    learning_rate = 1e-4
    max_epochs = 100

Files are searched in `DEFAULT_CONFIG_FILES` (later files override earlier ones),
then in any files given explicitly.  Each section is backed by an attrs class whose
fields carry their documentation (see `get_params_and_docs`); unknown sections,
unknown keys and unparsable values raise `ConfigError` naming ``[section] key``.
"""
import configparser
import importlib
import os.path

import attr
import click

from . import utils
from .errors import ConfigError, EarsepError
from .utils import process_path

__all__ = [
    "param",
    "get_params_and_docs",
    "parse_section",
    "Config",
    "load_config",
    "DEFAULT_CONFIG_FILES",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

APP_NAME = "earsep"

# Standard XDG config directory
# https://specifications.freedesktop.org/basedir-spec/basedir-spec-0.6.html
XDG_CONFIG_HOME = process_path(os.environ.get("XDG_CONFIG_HOME", "~/.config"))

EARSEP_DIR = process_path(os.path.dirname(__file__))

CONFIG_FILE_NAME = "earsep.conf"

DEFAULT_CONFIG_FILES = [
    process_path(os.path.join(_dir, CONFIG_FILE_NAME))
    for _dir in [
        EARSEP_DIR,
        click.get_app_dir(APP_NAME),
        "/etc",
        XDG_CONFIG_HOME,
        "~",
        ".",
    ]
]


def param(default=attr.NOTHING, doc="", kind=None, **kw):
    """Return an `attr.ib` carrying `doc` and an optional parse `kind`.

    Parameters
    ----------
    kind : str, None
       One of ``"int", "float", "bool", "str", "ints", "floats"``.  Inferred from
       `default` if omitted.  Prefix with ``"?"`` to accept ``none`` as None.
    """
    metadata = dict(kw.pop("metadata", {}), doc=doc, kind=kind)
    return attr.ib(default=default, metadata=metadata, **kw)


def _default(field):
    default = field.default
    if isinstance(default, attr.Factory):
        return None if default.takes_self else default.factory()
    return None if default is attr.NOTHING else default


def get_params_and_docs(cls):
    """Return a list of `(param, default, doc)` for the configurable fields of `cls`.

    >>> from earsep.dsp import StftConfig
    >>> [_p for (_p, _d, _doc) in get_params_and_docs(StftConfig)]
    ['window_length', 'hop', 'fft_size', 'window']
    """
    return [
        (_f.name, _default(_f), _f.metadata.get("doc", ""))
        for _f in attr.fields(cls)
        if _f.init
    ]


def _kind(field):
    kind = field.metadata.get("kind")
    if kind:
        return kind
    default = _default(field)
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, (tuple, list)):
        return "ints" if all(isinstance(_v, int) for _v in default) else "floats"
    return "str"


_BOOLEAN_STATES = configparser.ConfigParser.BOOLEAN_STATES


def _parse_value(kind, text):
    """Return `text` parsed as `kind`.

    >>> _parse_value("floats", "-10, -5 0")
    (-10.0, -5.0, 0.0)
    >>> _parse_value("?floats", "none") is None
    True
    >>> _parse_value("bool", "yes")
    True
    """
    text = text.strip()
    if kind.startswith("?"):
        if text.lower() in ("", "none"):
            return None
        kind = kind[1:]
    if kind == "bool":
        if text.lower() not in _BOOLEAN_STATES:
            raise ValueError(f"not a boolean: {text!r}")
        return _BOOLEAN_STATES[text.lower()]
    if kind in ("int", "float"):
        return {"int": int, "float": float}[kind](text)
    if kind in ("ints", "floats"):
        conv = int if kind == "ints" else float
        return tuple(conv(_v) for _v in text.replace(",", " ").split())
    return text


def parse_section(cls, section, options, exclude=()):
    """Return an instance of `cls` built from the string `options` of `section`."""
    fields = {_f.name: _f for _f in attr.fields(cls) if _f.init and _f.name not in exclude}
    kwargs = {}
    for key, text in options.items():
        if key not in fields:
            raise ConfigError(
                f"unknown key (known: {', '.join(sorted(fields))})", section, key
            )
        try:
            kwargs[key] = _parse_value(_kind(fields[key]), text)
        except ValueError as err:
            raise ConfigError(f"cannot parse {text!r}: {err}", section, key) from err
    return _build(cls, section, kwargs)


def _build(cls, section, kwargs):
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (EarsepError, TypeError, ValueError) as err:
        key = next((_k for _k in kwargs if _k in str(err)), None)
        raise ConfigError(str(err), section, key) from err


######################################################################
# Sections
@attr.s(frozen=True)
class GeneralOptions:
    """Global options."""

    seed = param(0, "Global seed for synthesis, initialization and training.")
    sample_rate = param(16000, "Sampling rate in Hz of all audio.")


@attr.s(frozen=True)
class CorpusOptions:
    """Where the dry speech and noise recordings come from.

    If `speech_dir` is empty a synthetic speech-like corpus is generated instead.
    """

    speech_dir = param("", "Directory of <speaker>/<utterance>.wav mono files.")
    noise_dir = param("", "Directory of noise .wav files (synthetic noise if empty).")
    synthetic_speakers = param(16, "Number of synthetic speakers.")
    utterances_per_speaker = param(2, "Synthetic utterances per speaker.")


# name: (dotted class path, excluded fields)
SECTIONS = {
    "earsep": ("earsep.config.GeneralOptions", ()),
    "room": ("earsep.scenes.acoustics.RoomSpec", ("t60",)),
    "array": ("earsep.scenes.acoustics.ArrayGeometry", ()),
    "shadow": ("earsep.scenes.acoustics.HeadShadow", ("sample_rate",)),
    "grid": ("earsep.scenes.dataset.SceneGrid", ()),
    "corpus": ("earsep.config.CorpusOptions", ()),
    "stft": ("earsep.dsp.StftConfig", ()),
    "model": ("earsep.model.ModelConfig", ()),
    "train": ("earsep.training.TrainConfig", ()),
}


def section_class(name):
    """Return the class backing section `name`."""
    path, _exclude = SECTIONS[name]
    module, cls = path.rsplit(".", 1)
    return getattr(importlib.import_module(module), cls)


@attr.s(frozen=True)
class Config:
    """All configuration sections.

    Attributes
    ----------
    sections : dict
       Section name to attrs instance.
    files : list
       Files that were actually read.
    """

    sections = attr.ib(factory=dict)
    files = attr.ib(factory=list)

    def __getitem__(self, name):
        return self.sections[name]

    @property
    def seed(self):
        return self["earsep"].seed

    @property
    def sample_rate(self):
        return self["earsep"].sample_rate

    def shadow(self):
        """Return the head-shadow parameters at the configured sample rate."""
        return attr.evolve(self["shadow"], sample_rate=self.sample_rate)

    def with_overrides(self, **overrides):
        """Return a copy with `overrides` ``{section: {key: value}}`` applied."""
        sections = dict(self.sections)
        for name, values in overrides.items():
            sections[name] = _build(
                type(sections[name]), name, dict(attr.asdict(sections[name]), **values)
            )
        return attr.evolve(self, sections=sections)

    def to_dict(self):
        return {
            _name: utils.to_jsonable(attr.asdict(_section))
            for _name, _section in self.sections.items()
        }


def load_config(config_files=(), use_defaults=True):
    """Return the `Config` read from `config_files`.

    Parameters
    ----------
    config_files : [str]
       Explicit files.  Each must exist.
    use_defaults : bool
       If True, `DEFAULT_CONFIG_FILES` are read first (missing ones are skipped).
    """
    config_files = [process_path(_f) for _f in config_files]
    for name in config_files:
        if not os.path.exists(name):
            raise ConfigError(f"Config file {name} does not exist")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        files = parser.read((DEFAULT_CONFIG_FILES if use_defaults else []) + config_files)
    except configparser.Error as err:
        raise ConfigError(f"Malformed config file: {err}") from err
    if files:
        log(f"Configuration loaded from {files}")

    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(
                f"unknown section (known: {', '.join(SECTIONS)})", section=name
            )
    sections = {}
    for name, (_path, exclude) in SECTIONS.items():
        options = dict(parser[name]) if parser.has_section(name) else {}
        sections[name] = parse_section(section_class(name), name, options, exclude)
    return Config(sections=sections, files=files)
