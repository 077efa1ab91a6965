"""Environmental contours as Voronoi cells of reflected origins."""

from .contour import (
    ContourResult,
    ValidityReport,
    corrected_contour,
    direct_contour_2d,
    validate_contour,
    voronoi_contour,
)
from .errors import EnvContourError
from .geometry import Polytope, delaunay_connectivity, reflection_set, voronoi_cell
from .model import sample
from .percentile import PercentileTable, estimate_percentile, estimate_table

__version__ = "0.1.0"

__all__ = [
    "ContourResult",
    "EnvContourError",
    "PercentileTable",
    "Polytope",
    "ValidityReport",
    "corrected_contour",
    "delaunay_connectivity",
    "direct_contour_2d",
    "estimate_percentile",
    "estimate_table",
    "reflection_set",
    "sample",
    "validate_contour",
    "voronoi_cell",
    "voronoi_contour",
]
