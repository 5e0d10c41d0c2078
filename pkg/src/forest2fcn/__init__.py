"""forest2fcn: random-forest-to-network compilation and a fully
convolutional traffic-sign detection pipeline built around it."""

__version__ = "0.1.0"
