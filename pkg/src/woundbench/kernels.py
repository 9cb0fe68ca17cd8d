"""Backend selection for the hot kernels.

The compiled Cython extension is used when it imports; otherwise the numpy
implementation in ``_pykernels`` takes over. ``get_backend`` lets callers
(tests, the benchmark) request a specific one.
"""

from __future__ import annotations

import logging
from types import ModuleType

from . import _pykernels

logger = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
    logger.debug("compiled kernels unavailable; using numpy fallback")

BACKENDS: dict[str, ModuleType] = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

DEFAULT_BACKEND = "cython" if _ckernels is not None else "python"


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module called ``name`` (default: fastest available)."""
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(BACKENDS)}") from None
