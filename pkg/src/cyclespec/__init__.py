"""Phase-aware, cycle-consistent, multi-resolution self-supervised speech enhancement.

Two convolutional VAEs are trained in sequence: a foundation autoencoder on
a small clean-speech set, then a downstream autoencoder on unpaired
mixtures. Enhancement encodes a mixture with the downstream encoder and
decodes amplitude and unwrapped phase with the foundation decoders.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, CycleSpecError, DataError, FormatError, InputError, IoError,
                     NumericsError, ShapeError, StateError, TapeError)

__all__ = [
    "__version__",
    "ConfigError", "CycleSpecError", "DataError", "FormatError", "InputError", "IoError",
    "NumericsError", "ShapeError", "StateError", "TapeError",
]
