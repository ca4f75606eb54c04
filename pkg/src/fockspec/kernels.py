"""Backend dispatch for the hot numeric kernels.

At import time the compiled Cython extension is preferred; the NumPy
fallback is used when the extension is unavailable or when the
``FOCKSPEC_PURE_PYTHON`` environment variable is set (useful for the
backend benchmark and for debugging).
"""

import os

if os.environ.get("FOCKSPEC_PURE_PYTHON"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

moment_sums = _impl.moment_sums
roots_in_bracket = _impl.roots_in_bracket
