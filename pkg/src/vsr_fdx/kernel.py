"""Backend selection for the simulator kernel.

The compiled extension is used when it imports; otherwise the pure-Python
kernel is used. Set ``VSR_FDX_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernel_py
from .errors import ConfigError

if os.environ.get("VSR_FDX_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _kernel as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKENDS = {"python": _kernel_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` (``None`` selects the default)."""
    if name is None:
        name = DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ConfigError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
