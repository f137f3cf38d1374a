"""Interrupt handling for long-running loops.

Training is wrapped in `NoInterrupt`: a Ctrl-C stops the loop after the current
epoch and its checkpoint.
"""
import signal
import threading
import time

__all__ = ["is_main_thread", "NoInterrupt"]


def is_main_thread():
    """Return True if this is the main thread."""
    return threading.current_thread() is threading.main_thread()


class NoInterrupt:
    """Context that turns SIGINT/SIGTERM into a soft `interrupted` flag.

    Inside the context an interrupt sets the flag (the instance becomes truthy)
    instead of raising.  `force_n` interrupts within `force_timeout` seconds are
    passed on to the original handler, so a stuck process can still be killed.
    Outside the main thread no handlers are installed and the flag stays False.

    Parameters
    ----------
    ignore : bool
       If False, a caught interrupt is re-raised through the original handler
       when the outermost context exits.

    Examples
    --------
    >>> with NoInterrupt() as interrupted:
    ...     done = False
    ...     while not interrupted and not done:
    ...         done = True

    >>> import os
    >>> n = 0
    >>> with NoInterrupt() as interrupted:
    ...     while not interrupted and n < 10:
    ...         n += 1
    ...         if n == 5:
    ...             os.kill(os.getpid(), signal.SIGINT)
    ...             time.sleep(0.1)
    >>> n
    5
    """

    force_n = 3
    force_timeout = 1.0

    _signals = (signal.SIGINT, signal.SIGTERM)
    _lock = threading.RLock()
    _original_handlers = {}
    _depth = 0
    _raised = []  # (signum, frame, time) of interrupts in the active contexts
    _count = 0

    def __init__(self, ignore=True):
        self.ignore = ignore
        self._active = False
        self._count_at_start = self._count

    @classmethod
    def _register(cls):
        cls._original_handlers = {
            _signum: signal.signal(_signum, cls._handle_signal) for _signum in cls._signals
        }

    @classmethod
    def _unregister(cls):
        while cls._original_handlers:
            _signum, _handler = cls._original_handlers.popitem()
            signal.signal(_signum, _handler)

    @classmethod
    def _handle_signal(cls, signum, frame):
        with cls._lock:
            now = time.time()
            cls._raised.append((signum, frame, now))
            NoInterrupt._count += 1
            recent = [_t for (_s, _f, _t) in cls._raised if now - _t < cls.force_timeout]
            if len(recent) >= cls.force_n:
                cls._call_original(signum, frame)

    @classmethod
    def _call_original(cls, signum, frame):
        handler = cls._original_handlers.get(signum)
        if callable(handler):
            handler(signum, frame)
        elif signum == signal.SIGINT:
            raise KeyboardInterrupt
        else:
            raise SystemExit(128 + signum)

    def __enter__(self):
        with self._lock:
            self._active = True
            self._count_at_start = NoInterrupt._count
            if is_main_thread():
                if NoInterrupt._depth == 0:
                    self._register()
                NoInterrupt._depth += 1
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        with self._lock:
            self._active = False
            if not is_main_thread():
                return
            NoInterrupt._depth -= 1
            if NoInterrupt._depth > 0:
                return
            raised, NoInterrupt._raised = list(NoInterrupt._raised), []
            try:
                if raised and not self.ignore and exc_type is None:
                    signum, frame, _time = raised[-1]
                    self._call_original(signum, frame)
            finally:
                self._unregister()

    def __bool__(self):
        """Return True if interrupted."""
        with self._lock:
            return NoInterrupt._count > self._count_at_start

