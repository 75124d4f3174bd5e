"""Shared-latent-query retrieval: python surface over the C++ core."""

try:
    from ._slq import *  # noqa: F401,F403  (installed wheel layout)
except ImportError:
    from _slq import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
