"""Backend selection for the hot kernels.

``deidpolicy._kernels_impl`` is loaded twice: ``py_kernels`` stays pure
Python/numpy; ``nb_kernels`` has every kernel compiled with ``numba.njit``.
The active backend is numba when available, overridable with the environment
variable ``DEIDPOLICY_BACKEND=numba|numpy`` (read at import). Both backends
consume the same pre-generated uniforms and return bit-identical results;
the numba path is just much faster (see ``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import importlib.util
import os

_IMPL = "deidpolicy._kernels_impl"

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _load_impl():
    # a fresh module object per load, so compiled and pure copies do not
    # share globals (compiled kernels must resolve callees to compiled ones)
    spec = importlib.util.find_spec(_IMPL)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def _compile(mod):
    for name, opts in mod.KERNEL_SPECS:
        fn = getattr(mod, name)
        setattr(mod, name, njit(cache=True, **opts)(fn))
    return mod


py_kernels = _load_impl()
nb_kernels = _compile(_load_impl()) if HAVE_NUMBA else None

_requested = os.environ.get("DEIDPOLICY_BACKEND", "auto").strip().lower() or "auto"
if _requested == "auto":
    BACKEND = "numba" if HAVE_NUMBA else "numpy"
elif _requested == "numba":
    if not HAVE_NUMBA:
        raise ImportError("DEIDPOLICY_BACKEND=numba but numba is not importable")
    BACKEND = "numba"
elif _requested in ("numpy", "python"):
    BACKEND = "numpy"
else:
    raise ValueError(
        f"DEIDPOLICY_BACKEND={_requested!r} not recognized (use numba or numpy)"
    )

kernels = nb_kernels if BACKEND == "numba" else py_kernels


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
