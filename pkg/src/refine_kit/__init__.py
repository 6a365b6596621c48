"""refine-kit: post-pre-training of cached dual-encoder embeddings.

Trains small residual heads over frozen image/text embeddings with a
combination of random-reference alignment and hybrid
contrastive-distillation, and measures the feature space (modality gap,
alignment, uniformity, recall@k, zero-shot accuracy, PCA projections).

Hot kernels run on a compiled extension when built, with a pure-numpy
fallback selected at import (see refine_kit.kernels).
"""

from .kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
