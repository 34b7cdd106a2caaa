"""driftline: streaming sketches, drift detection and automated retraining."""

__version__ = "0.1.0"
