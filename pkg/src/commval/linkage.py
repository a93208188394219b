"""Average-linkage merge kernel, compiled when available.

Set ``COMMVAL_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

import numpy as np

from . import _linkage_py

TIE_EPS = 1e-12

_compiled = None
if not os.environ.get("COMMVAL_PURE_PYTHON"):
    try:
        from . import _linkage as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def average_linkage_merges(dist, n_clusters, eps=TIE_EPS, backend=None):
    """Return ``(pairs, heights)`` for merging ``dist`` down to ``n_clusters``.

    ``pairs[s] = (i, j)`` with ``i < j`` means slot ``j`` was folded into slot
    ``i`` at step ``s``, at average-linkage distance ``heights[s]``.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled linkage kernel is not built")
        return _compiled.average_linkage_merges(dist, int(n_clusters), float(eps))
    if backend == "python":
        return _linkage_py.average_linkage_merges(dist, int(n_clusters), float(eps))
    raise ValueError(f"unknown backend {backend!r}")
