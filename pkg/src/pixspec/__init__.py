"""Joint design of pixel-level spectral filter layouts and linear reconstructors
for compressive push-broom hyperspectral imaging."""

__version__ = "0.1.0"
