"""Phase tracking for travelling waves in stochastic reaction-diffusion equations."""

__version__ = "0.1.0"
