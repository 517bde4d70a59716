"""Segmentation and restoration of images on triangulated surfaces.

The package evolves polygonal curve networks on a static triangulated
surface under curvature flow with image-driven forcing, handles the
topology changes that occur along the way (splitting, merging, triple
junction creation, deletion), maintains the induced region partition of
the mesh, and restores the image region by region once the curves have
converged.
"""

from .mesh import SurfaceMesh, MeshLocation, FaceImage, load_mesh, save_mesh
from .curves import (Curve, TripleJunction, CurveNetwork, NodeFrames,
                     compute_frames, refine_coarsen, validate_assumptions)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "SurfaceMesh", "MeshLocation", "FaceImage", "load_mesh", "save_mesh",
    "Curve", "TripleJunction", "CurveNetwork", "NodeFrames",
    "compute_frames", "refine_coarsen", "validate_assumptions",
    "errors", "__version__",
]
