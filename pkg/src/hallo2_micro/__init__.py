"""Desk-scale long-duration portrait animation pipeline.

Incremental latent-diffusion generation conditioned on a reference image,
a scalar driving signal, and expression labels; motion-frame corruption
(patch drop + Gaussian latent noise) against appearance drift; a codebook
enhancement stage with temporal alignment; and a synthetic "talking blob"
corpus that makes the whole thing trainable and measurable in minutes on a
CPU.
"""

__version__ = "0.1.0"

CACHE_ENV = "HALLO2_MICRO_CACHE"
