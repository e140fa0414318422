"""Box-parametric TSDF maps, their losses and fitter, topological and
planning graphs, and room-level exploration."""

import logging

from .boxcalc import BoxSet, DoorBox, RoomBox, composite_tsdf, rasterize
from .gridworld import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose, TsdfGrid, chamfer_tsdf

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "BoxSet", "DoorBox", "RoomBox", "composite_tsdf", "rasterize",
    "FREE", "OCCUPIED", "UNKNOWN", "OccupancyGrid", "Pose", "TsdfGrid", "chamfer_tsdf",
]
