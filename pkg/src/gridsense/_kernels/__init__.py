"""Hot assembly kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``GRIDSENSE_NUMBA=0`` to
force the numpy path; it is also used when numba cannot be imported.
Both backends are importable explicitly through :func:`get_backend`.
"""

import importlib
import os

from . import _numpy

_FUNCS = ("injected_currents", "sens_triplets", "jac_triplets", "jac_dense",
          "tree_assemble", "tree_factor", "tree_solve", "tree_unit_magnitudes")


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name: str):
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        return importlib.import_module(f"{__name__}._numba")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select() -> str:
    flag = os.environ.get("GRIDSENSE_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return "numpy"
    return "numba" if numba_available() else "numpy"


BACKEND = _select()
_mod = get_backend(BACKEND)
injected_currents = _mod.injected_currents
sens_triplets = _mod.sens_triplets
jac_triplets = _mod.jac_triplets
jac_dense = _mod.jac_dense
tree_assemble = _mod.tree_assemble
tree_factor = _mod.tree_factor
tree_solve = _mod.tree_solve
tree_unit_magnitudes = _mod.tree_unit_magnitudes

__all__ = ["BACKEND", "get_backend", "numba_available", *_FUNCS]
