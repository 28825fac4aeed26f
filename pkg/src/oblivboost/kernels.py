"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the numpy
fallback is used. Both expose the same functions and produce identical
results; `set_active` lets tests and the benchmark pin a backend.
"""

from __future__ import annotations

from . import _kernels_np

try:
    from . import _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

_active = _kernels_ext if _kernels_ext is not None else _kernels_np


def has_extension() -> bool:
    return _kernels_ext is not None


def available() -> list[str]:
    names = ["numpy"]
    if _kernels_ext is not None:
        names.insert(0, "ext")
    return names


def get(name: str):
    if name == "numpy":
        return _kernels_np
    if name == "ext":
        if _kernels_ext is None:
            raise RuntimeError("compiled kernel extension is not available")
        return _kernels_ext
    raise ValueError(f"unknown kernel backend {name!r}")


def active():
    return _active


def active_name() -> str:
    return _active.BACKEND


def set_active(name: str) -> None:
    global _active
    _active = get(name)
