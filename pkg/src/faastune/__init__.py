"""QoS-aware resource management toolkit for multi-stage serverless workflows."""

__version__ = "0.1.0"
