"""SCCF candidate-generation engine.

Thin wrapper around the compiled _sccf module: FISM and SASRec user-item
models, the real-time user-neighborhood component, the integrating network,
and the leave-one-out evaluation harness.
"""

try:
    from ._sccf import *  # noqa: F401,F403  (installed wheel layout)
    from . import _sccf as _impl
except ImportError:  # in-tree build: module on PYTHONPATH next to the package
    from _sccf import *  # noqa: F401,F403
    import _sccf as _impl

__all__ = [name for name in dir(_impl) if not name.startswith("_")]
__version__ = "0.1.0"
