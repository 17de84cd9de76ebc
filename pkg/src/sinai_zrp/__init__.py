"""Zero-range particles in a Sinai-type random environment."""

__version__ = "0.1.0"
