"""Backend selection for the hot kernels.

Numba is used when importable unless ``GMCLAB_DISABLE_NUMBA`` is set to a
truthy value, in which case the pure-numpy kernels are used instead. Both
backends implement the same functions with the same signatures.
"""

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    flag = os.environ.get("GMCLAB_DISABLE_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"


def kernels(name: str | None = None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        from gmclab import _kernels_nb as mod
    elif name == "numpy":
        from gmclab import _kernels_np as mod
    else:
        raise ValueError(f"unknown backend {name!r}")
    return mod
