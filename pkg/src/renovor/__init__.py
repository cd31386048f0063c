"""renovor: renal vasculature segmentation and dominant-region toolkit.

Volumetric primitives, Hessian-based vesselness filtering, tensor-augmented
graph-cut vessel segmentation, centerline tree extraction, Voronoi
dominant-region partitioning, overlap/surface metrics, training math for
fully convolutional segmentation networks, and synthetic phantom generation.
"""

from renovor.volume import (
    LabelVolume,
    ScalarVolume,
    VolumeGeometry,
    load_metaimage,
    save_metaimage,
)

__version__ = "0.1.0"

__all__ = [
    "VolumeGeometry",
    "ScalarVolume",
    "LabelVolume",
    "load_metaimage",
    "save_metaimage",
    "__version__",
]
