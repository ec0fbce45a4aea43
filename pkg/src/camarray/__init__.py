"""camarray: multi-camera mosaic processing, tracking and geolocation toolkit."""

from .core import BBox, Category, Frame, Mosaic, abs_diff_threshold, concat_mosaic, iou

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Category",
    "Frame",
    "Mosaic",
    "abs_diff_threshold",
    "concat_mosaic",
    "iou",
    "__version__",
]
