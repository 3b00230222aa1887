"""Position error bounds for multipath-assisted indoor positioning."""

from .channel import DmParams, SignalParams
from .evaluate import GridSpec, Scenario, evaluate_points, peb_cdf, peb_map
from .geometry import Floorplan, GeometryError, Wall, build_vas

__version__ = "0.1.0"
