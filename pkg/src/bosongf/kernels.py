"""Backend selection for the trajectory integrator.

The compiled extension is used when it was built; otherwise the NumPy
fallback is loaded.  Set ``BOSONGF_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _pycore

log = logging.getLogger(__name__)

BACKENDS = {"python": _pycore}

try:
    from . import _core
except ImportError:
    _core = None
else:
    BACKENDS["compiled"] = _core

if _core is not None and not os.environ.get("BOSONGF_PURE_PYTHON"):
    BACKEND = "compiled"
else:
    BACKEND = "python"
    if _core is None:
        log.debug("compiled core unavailable, using NumPy fallback")


def get(name: str | None = None):
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {sorted(BACKENDS)})") from None


def integrate(*args, backend: str | None = None, **kwargs):
    return get(backend).integrate(*args, **kwargs)


def apply_block(*args, backend: str | None = None):
    return get(backend).apply_block(*args)
