"""Kernel backend selection: compiled extension when available, numpy otherwise.

Set ``VISFORM_PURE_PYTHON=1`` to force the numpy kernels (used by the backend
benchmark and the parity tests).
"""

from __future__ import annotations

import contextlib
import os

if os.environ.get("VISFORM_PURE_PYTHON") == "1":
    from . import _quest_py as kernels
else:
    try:
        from . import _quest_cy as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _quest_py as kernels  # type: ignore[no-redef]

COMPILED: bool = bool(getattr(kernels, "COMPILED", False))


def available_backends() -> list[str]:
    out = ["python"]
    try:
        from . import _quest_cy  # noqa: F401

        out.insert(0, "compiled")
    except ImportError:
        pass
    return out


def backend_module(name: str):
    if name == "python":
        from . import _quest_py

        return _quest_py
    if name == "compiled":
        from . import _quest_cy

        return _quest_cy
    raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def temporary_backend(name: str):
    """Swap the kernels the estimator uses for the duration of a block."""
    from . import core

    saved = core.kernels
    core.kernels = backend_module(name)
    try:
        yield
    finally:
        core.kernels = saved


__all__ = ["kernels", "COMPILED", "available_backends", "backend_module", "temporary_backend"]
