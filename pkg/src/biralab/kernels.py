"""Backend selection for the hot decoding kernels.

The compiled Cython module is used when it imports; otherwise (or when
``BIRALAB_PURE_PYTHON=1`` is set) the numpy implementation is used. Both agree
on sampled ids; probability vectors agree to within a few ulps because libm
and numpy's vectorised ``exp`` round differently.
"""
import os

import numpy as np

from . import _pykernels

_compiled = None
if not os.environ.get("BIRALAB_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "cython" if _compiled is not None else "python"


def _as_logits(logits):
    return np.ascontiguousarray(logits, dtype=np.float64)


def softmax(logits, temperature=1.0):
    return _impl.softmax(_as_logits(logits), float(temperature))


def nucleus_probs(logits, temperature, top_p):
    return _impl.nucleus_probs(_as_logits(logits), float(temperature), float(top_p))


def sample_nucleus(logits, temperature, top_p, u):
    return int(_impl.sample_nucleus(_as_logits(logits), float(temperature), float(top_p), float(u)))


def permutation(seed, n):
    return _impl.permutation(int(seed), int(n))
