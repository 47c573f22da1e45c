"""Select the reception kernel: compiled if importable, numpy otherwise.

Set ``LORASF_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

KERNELS = {"python": _pykernel.resolve_events}
if _ckernel is not None:
    KERNELS["cython"] = _ckernel.resolve_events

if os.environ.get("LORASF_PURE_PYTHON") or _ckernel is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

resolve_events = KERNELS[BACKEND]
