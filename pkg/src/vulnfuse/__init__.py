"""Smart-contract vulnerability detection with fused parallel detectors."""

__version__ = "0.1.0"
