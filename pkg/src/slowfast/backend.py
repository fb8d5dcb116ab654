"""Backend selection between the compiled core and the NumPy engine.

The compiled core (``slowfast._core``) is imported once, here.  When it is
missing, or ``SLOWFAST_BACKEND=python`` is set, every batch runs on the
NumPy engine; ``SLOWFAST_BACKEND=compiled`` makes a missing core an error.
"""

import contextlib
import os

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

HAVE_CORE = _core is not None

_requested = os.environ.get("SLOWFAST_BACKEND", "auto").lower()
if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"SLOWFAST_BACKEND must be auto, python or compiled, got {_requested!r}")
if _requested == "compiled" and not HAVE_CORE:
    raise ImportError("SLOWFAST_BACKEND=compiled but slowfast._core is not built")

_current = "python" if (_requested == "python" or not HAVE_CORE) else "compiled"


def name() -> str:
    """``'compiled'`` or ``'python'``."""
    return _current


def core():
    """The compiled module, or ``None`` if the NumPy engine is selected."""
    return _core if _current == "compiled" else None


@contextlib.contextmanager
def use(backend: str):
    """Temporarily switch backend (tests and benchmarks)."""
    global _current
    if backend not in ("python", "compiled"):
        raise ValueError(backend)
    if backend == "compiled" and not HAVE_CORE:
        raise RuntimeError("compiled core not available")
    prev, _current = _current, backend
    try:
        yield
    finally:
        _current = prev


def default_threads() -> int:
    env = os.environ.get("SLOWFAST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
