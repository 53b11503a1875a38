"""Backend selection for the hot quadrature kernel.

The compiled ``_agq`` extension is used when it imports; otherwise, or when
``CURVEBIC_PURE_PYTHON=1`` is set, the numpy implementation in ``_agq_py``
is used. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _agq_py
from ._agq_py import BINOMIAL, POISSON
from .errors import InnerModeFailure

_compiled = None
if os.environ.get("CURVEBIC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _agq as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def available_backends():
    return ("python", "cython") if _compiled is not None else ("python",)


def agq_loglik(eta, y, w, starts, family, nodes, logw, modes, backend=None):
    """Per-group adaptive Gauss-Hermite log marginal likelihoods.

    ``modes`` is a (g, q) warm start and is overwritten with the per-group
    posterior modes. Raises :class:`InnerModeFailure` when Newton fails.
    """
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled backend is not available")
        out, failed = _compiled.agq_loglik(
            np.ascontiguousarray(eta, dtype=float), np.ascontiguousarray(y, dtype=float),
            np.ascontiguousarray(w, dtype=float), np.ascontiguousarray(starts, dtype=np.int64),
            int(family), np.ascontiguousarray(nodes, dtype=float),
            np.ascontiguousarray(logw, dtype=float), modes)
    else:
        out, failed = _agq_py.agq_loglik(np.asarray(eta, float), np.asarray(y, float),
                                         np.asarray(w, float), starts, int(family),
                                         np.asarray(nodes, float), np.asarray(logw, float),
                                         modes)
    if failed >= 0:
        raise InnerModeFailure(failed)
    return out


__all__ = ["BACKEND", "BINOMIAL", "POISSON", "agq_loglik", "available_backends"]
