"""User-centric distributed massive MIMO over LEO constellations."""

__version__ = "0.1.0"
