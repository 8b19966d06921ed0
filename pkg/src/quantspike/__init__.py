"""quantspike: quantized ANN training, SNN conversion, and simulation."""

__version__ = "0.1.0"
