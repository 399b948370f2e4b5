"""Multi-IMU error-state filter with online calibration, and its simulation harness."""

__version__ = "0.1.0"
