"""Deterministic co-speech gesture and facial expression synthesis.

Turns dialogue text plus a speech duration into a skeletal gesture track
(semantic retrieval over a BVH gesture library, stitching, retiming) and a
blendshape face track (emotion-vector expression retrieval, transitions,
blinking, lip-sync), along with the tooling that builds the expression
dataset the face side retrieves from.
"""

__version__ = "0.1.0"

from .errors import ProviderError, ToonmotionError, ValidationError

__all__ = [
    "ProviderError",
    "ToonmotionError",
    "ValidationError",
    "__version__",
]
