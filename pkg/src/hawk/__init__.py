"""Value-free personal-data flow tracking for microservice traffic."""

__version__ = "0.1.0"
