"""In-process bindings over instamask mask builds.

Three read-only producers for training-side consumers: build a bundle
from a scene file, parse a build output directory back into the same
arrays, and summarize a scene file.  Returned arrays are frozen float64
numpy arrays; everything else is a read-only mapping.
"""

from ._bundles import (
    BoundMaskBundle,
    bound_build_masks,
    bound_load_exports,
    bound_load_scene,
)

__version__ = "0.1.0"

__all__ = [
    "BoundMaskBundle",
    "bound_build_masks",
    "bound_load_exports",
    "bound_load_scene",
]
