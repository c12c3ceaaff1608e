"""Pyramid finite elements: rational approximation spaces, conical quadrature and reduced-order assembly."""
from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("ratpoly", "exact", "geometry", "spaces", "quadrature", "element", "meshfem", "verify", "cli",
               "errors")


def __getattr__(name):
    # lazy, so that the CLI can cap BLAS threads before numpy loads
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = list(_SUBMODULES)
