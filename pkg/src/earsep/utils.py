"""Small utilities shared across earsep: logging, seeding and digests."""
from contextlib import contextmanager
import hashlib
import json
import logging
import os.path
import sys

import numpy as np

__all__ = [
    "Logger",
    "set_verbosity",
    "process_path",
    "derive_rng",
    "derive_seed",
    "array_digest",
    "file_digest",
    "to_jsonable",
]

ROOT_LOGGER_NAME = "earsep"


def process_path(path):
    """Return the normalized path with '~' and vars expanded."""
    return os.path.normpath(os.path.expandvars(os.path.expanduser(path)))


class MyFormatter(logging.Formatter):
    """Compact formatter: one-letter level, time, and the module name."""

    def __init__(self):
        logging.Formatter.__init__(
            self,
            fmt="[%(levelname)s %(asctime)s earsep-%(shortname)s] %(message)s",
            datefmt="%H:%M:%S",
        )

    def format(self, record):
        record.levelname = record.levelname[0]
        name = record.name
        if name.startswith(ROOT_LOGGER_NAME + "."):
            name = name[len(ROOT_LOGGER_NAME) + 1 :]
        record.shortname = name
        msg = logging.Formatter.format(self, record)
        if record.levelno >= logging.WARNING:
            msg += "\n{}{}:{}".format(" " * 14, record.filename, record.lineno)
        return msg


def _root_logger():
    """Return the package logger, installing our handler once."""
    logger = logging.getLogger(ROOT_LOGGER_NAME)
    if not any(getattr(h, "_earsep", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler._earsep = True
        handler.setFormatter(MyFormatter())
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
        logger.propagate = False
    return logger


def set_verbosity(level):
    """Set the level of all earsep loggers.

    Parameters
    ----------
    level : int, str
       Logging level such as `logging.WARNING` or ``"DEBUG"``.
    """
    _root_logger().setLevel(level)


class Logger:
    """Logging object with nested task contexts.

    Names are placed under the ``earsep`` logger so that `set_verbosity` controls
    them all.
    """

    def __init__(self, name="", indent_amount=2):
        if name.startswith(ROOT_LOGGER_NAME + ".") or name == ROOT_LOGGER_NAME:
            self.name = name
        else:
            self.name = ".".join(filter(None, [ROOT_LOGGER_NAME, name]))
        self.nesting = 0
        self.indent_amount = indent_amount
        _root_logger()

    @property
    def logger(self):
        """Return the logger."""
        # Get logger each time so handlers are properly dealt with
        return logging.getLogger(self.name)

    @property
    def indent(self):
        """Return the appropriate indentation."""
        return " " * self.indent_amount * self.nesting

    def log(self, msg, level=logging.INFO):
        """Log msg to the logger."""
        self.logger.log(level=level, msg=self.indent + msg)

    def debug(self, msg, level=logging.DEBUG):
        """Log debug msg to the logger."""
        self.log(msg, level=level)

    def info(self, msg, level=logging.INFO):
        """Log info msg to the logger."""
        self.log(msg, level=level)

    def warning(self, msg, level=logging.WARNING):
        """Log warning msg to the logger."""
        self.log(msg, level=level)

    def error(self, msg, level=logging.ERROR):
        """Log error msg to the logger."""
        self.log(msg, level=level)

    @contextmanager
    def log_task(self, msg, level=logging.INFO):
        """Context for tasks with paired start and Done messages.

        Parameters
        ----------
        msg : str
           Message.  By default, results in messages like::

               msg...
               msg. Done.
               msg. Failed!

        level : int
           Logging level (default INFO)
        """
        self.log(msg + "...", level=level)
        try:
            self.nesting += 1
            yield
            self.nesting -= 1
            self.log(msg + ". Done.", level=level)
        except Exception:
            self.nesting -= 1
            self.log(msg + ". Failed!", level=logging.ERROR)
            raise


######################################################################
# Seeding
def derive_seed(seed, *keys):
    """Return a 64-bit integer seed derived from `seed` and integer `keys`.

    The result depends only on the arguments, so streams derived for different
    example indices are independent of the order in which they are generated.

    >>> derive_seed(0, 3) == derive_seed(0, 3)
    True
    >>> derive_seed(0, 3) == derive_seed(0, 4)
    False
    """
    seq = np.random.SeedSequence([int(seed)] + [int(_k) for _k in keys])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed, *keys):
    """Return a `numpy.random.Generator` for the stream `(seed, *keys)`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + list(map(int, keys))))


######################################################################
# Digests and serialization
def array_digest(*arrays):
    """Return a sha256 hex digest of the bytes, dtypes and shapes of `arrays`.

    >>> a = np.arange(4.0)
    >>> array_digest(a) == array_digest(a.copy())
    True
    >>> array_digest(a) == array_digest(a + 1)
    False
    """
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str((a.dtype.str, a.shape)).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def file_digest(*paths):
    """Return a sha256 hex digest of the concatenated file contents."""
    h = hashlib.sha256()
    for path in paths:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def to_jsonable(obj):
    """Return `obj` with numpy scalars/arrays and tuples converted for `json`.

    >>> json.dumps(to_jsonable({"a": np.float64(1.5), "b": (np.int64(2), 3)}))
    '{"a": 1.5, "b": [2, 3]}'
    """
    if isinstance(obj, dict):
        return {str(_k): to_jsonable(_v) for _k, _v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(_v) for _v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
