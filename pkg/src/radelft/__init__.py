"""FMCW TDMA-MIMO radar detection pipeline: simulation, signal processing,
ground truth, CFAR and neural occupancy detectors, and evaluation."""
from .core import (AdcFrame, ArrayGeometry, ConfigError, OccupancyGrid, PointCloud,
                   PolarGrid, RadarCube, WaveformConfig, derived_quantities)

__version__ = "0.1.0"

__all__ = ["AdcFrame", "ArrayGeometry", "ConfigError", "OccupancyGrid", "PointCloud",
           "PolarGrid", "RadarCube", "WaveformConfig", "derived_quantities"]
