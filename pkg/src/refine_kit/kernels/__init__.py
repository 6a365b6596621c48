"""Hot numerical kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``_hot``, built from Cython) is preferred when
importable; set ``REFINE_KIT_NO_EXT=1`` to force the numpy backend.
Both backends expose the same three functions over C-contiguous float64
arrays:

    row_softmax(scores)             -> probabilities, rows sum to 1
    kl_grad_from_logits(scores, t)  -> (scalar, gradient in the logits)
    rbf_pair_sum(feats)             -> sum over ordered pairs of exp(-2 d^2)

``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from . import _numpy

if os.environ.get("REFINE_KIT_NO_EXT"):
    _impl = _numpy
else:
    try:
        from . import _hot as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy

row_softmax = _impl.row_softmax
kl_grad_from_logits = _impl.kl_grad_from_logits
rbf_pair_sum = _impl.rbf_pair_sum


def backend_name() -> str:
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return _impl.BACKEND
