"""melflow: autoregressive normalizing flows over mel-spectrogram sequences.

A library plus CLI for exact-likelihood text-to-spectrogram training,
invertible synthesis with controllable variation, latent-space manipulation,
and the pitch/duration analysis toolkit used to verify variation claims at
desk scale.
"""

__version__ = "0.1.0"

from . import autodiff  # noqa: F401
