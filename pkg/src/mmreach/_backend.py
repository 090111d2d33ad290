"""Kernel backend selection.

Prefers the compiled extension, falls back to the numpy implementation.
Set MMREACH_BACKEND=python or MMREACH_BACKEND=cython to force a choice;
forcing cython raises if the extension is missing.
"""
from __future__ import annotations

import os

_requested = os.environ.get("MMREACH_BACKEND", "").strip().lower()

if _requested == "python":
    from . import _kernels_py as kernels
elif _requested == "cython":
    from . import _kernels as kernels  # type: ignore[no-redef]
elif _requested in ("", "auto"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]
else:
    raise ImportError(f"MMREACH_BACKEND={_requested!r}: expected 'cython', "
                      "'python' or 'auto'")

backend_name: str = kernels.BACKEND_NAME
run_program = kernels.run_program
box_extremum = kernels.box_extremum
