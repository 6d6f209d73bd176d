"""Config-driven crop-yield dataset pipeline with leakage-free modelling."""

__version__ = "0.1.0"
