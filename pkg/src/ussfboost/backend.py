"""Kernel backend selection.

The closed-loop simulation loop exists twice: a Cython extension
(``ussfboost._kernel``) and a pure-Python mirror
(``ussfboost._kernel_py``).  Both take and return the same plain
dict and are kept textually in step so results agree to rounding.
The compiled one is preferred when importable; set

    USSFBOOST_BACKEND=python   (or =compiled)

before import to force a choice.  Forcing "compiled" when the
extension is missing raises at import so a benchmark cannot silently
measure the wrong thing.
"""

from __future__ import annotations

import os

from . import _kernel_py

_FORCED = os.environ.get("USSFBOOST_BACKEND", "").strip().lower()
if _FORCED not in ("", "python", "compiled"):
    raise ImportError(
        f"USSFBOOST_BACKEND={_FORCED!r} not recognized; "
        "use 'python' or 'compiled'")

_compiled = None
if _FORCED != "python":
    try:
        from . import _kernel as _compiled  # type: ignore[no-redef]
    except ImportError:
        _compiled = None
        if _FORCED == "compiled":
            raise ImportError(
                "USSFBOOST_BACKEND=compiled but the extension module "
                "ussfboost._kernel is not built; install with Cython "
                "and a C compiler available, or unset the override")

if _compiled is not None:
    BACKEND = "compiled"
    run_closed_loop = _compiled.run_closed_loop
else:
    BACKEND = "python"
    run_closed_loop = _kernel_py.run_closed_loop


def available_backends() -> tuple:
    """Names of the kernels importable in this environment."""
    names = ["python"]
    try:
        from . import _kernel  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return tuple(names)


def get_kernel(name: str):
    """Fetch a specific kernel's run_closed_loop regardless of default."""
    if name == "python":
        return _kernel_py.run_closed_loop
    if name == "compiled":
        from . import _kernel
        return _kernel.run_closed_loop
    raise ValueError(f"unknown backend {name!r}")
