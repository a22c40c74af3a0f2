"""Hot numeric kernels: compiled extension with a pure-Python fallback.

The Cython build (``microtikz._kernels._fast``) is selected at import when
available; otherwise the pure twin (``_pure``) is used. Set
``MICROTIKZ_PURE=1`` to force the fallback (used by the parity tests and
the benchmark). Both backends execute the same algorithm step for step, so
results are identical.
"""

import os

if os.environ.get("MICROTIKZ_PURE") == "1":
    from . import _pure as _impl
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pure as _impl

solve_assignment = _impl.solve_assignment
levenshtein = _impl.levenshtein
BACKEND = _impl.BACKEND
