"""Lane-level HD map reconstruction.

Semantic front-view rasters and vehicle poses are projected into a bird's-eye
view grid, explored with a sedan-sized particle filter, regressed into lane
center lines with asymmetric boundaries, and stitched together across
intersections with quadratic Bezier reference curves.
"""

__version__ = "0.1.0"
