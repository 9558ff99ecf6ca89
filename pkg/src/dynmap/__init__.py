"""Maps of Dynamics: crowd simulation, flow/direction/entropy grid maps, losses and a toy predictor."""

__version__ = "0.1.0"
