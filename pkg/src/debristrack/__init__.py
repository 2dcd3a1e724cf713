"""Space-debris streak simulation with endpoint-based tracking and MOT scoring."""

__version__ = "0.1.0"
