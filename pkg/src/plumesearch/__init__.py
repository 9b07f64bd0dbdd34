"""Gas source localization engine.

Builds a probabilistic gas-hit map from single-point gas/wind
measurements, compares it against hit maps predicted by an online 2D
filament dispersion model for candidate source locations, and drives an
autonomous search to convergence. Ships with a deterministic, seedable
simulation harness for batch experiments, a CLI, and a FastAPI service.
"""

__version__ = "0.1.0"
