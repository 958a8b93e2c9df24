"""Multi-slide pathology report pipeline: tiling, packing, generation, metrics, stats."""

__version__ = "0.1.0"
