"""Joint planning and prediction with transformer feature sharing, at desk scale."""

__version__ = "0.1.0"
