"""Kernel selection.

The compiled extension is preferred. Set ``MULTITASK_GGM_BACKEND=python`` to
force the pure-Python kernel.
"""

import os
from types import SimpleNamespace

from . import _pykernels

_python = SimpleNamespace(
    name="python",
    update_variable=_pykernels.update_variable,
    KernelStateError=_pykernels.KernelStateError,
)

try:
    from . import _kernels
except ImportError:  # extension not built
    _compiled = None
else:
    _compiled = SimpleNamespace(
        name="compiled",
        update_variable=_kernels.update_variable,
        KernelStateError=_pykernels.KernelStateError,
    )

if os.environ.get("MULTITASK_GGM_BACKEND", "").lower() == "python":
    DEFAULT = _python
else:
    DEFAULT = _compiled or _python


def available() -> list:
    return [b.name for b in (_compiled, _python) if b is not None]


def get_kernel(name=None):
    if name is None:
        return DEFAULT
    if name == "python":
        return _python
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel is not available; "
                              "build the package extension first")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
