"""Multi-cell FDD massive MIMO CSIT estimation by joint sparse recovery.

Modules
-------
channel_model
    Hexagonal layout, path loss, angular-domain sparse channels.
pilots
    Random-phase pilots, active-cell selection, sensing matrices, feedback.
estimators
    Joint multi-user multi-cell OMP and its baselines, oracle LS, NMSE.
precoding
    Cluster-based joint zero-forcing and throughput evaluation.
harness
    Configuration-driven Monte-Carlo experiments and CSV output.
"""

from .errors import ConfigError, DimensionError, UnderdeterminedError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DimensionError", "UnderdeterminedError", "__version__"]
