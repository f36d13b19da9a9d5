"""Pick the compiled core when it is importable, else the numpy fallback.

``SQFC_BACKEND=python`` forces the fallback; ``use_backend`` switches at
runtime (tests and the benchmark use it to compare the two).
"""

import contextlib
import os

from . import _pycore

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _pycore}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_requested = os.environ.get("SQFC_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"SQFC_BACKEND must be 'python' or 'compiled', got {_requested!r}")
if _requested == "compiled" and _compiled is None:
    raise ImportError("SQFC_BACKEND=compiled but the extension sqfc._core is not built")

NAME = _requested or ("compiled" if _compiled is not None else "python")
impl = _BACKENDS[NAME]


def available():
    return sorted(_BACKENDS)


def get(name=None):
    return impl if name is None else _BACKENDS[name]


def set_backend(name):
    global NAME, impl
    impl = _BACKENDS[name]
    NAME = name


@contextlib.contextmanager
def use_backend(name):
    prev = NAME
    set_backend(name)
    try:
        yield impl
    finally:
        set_backend(prev)
