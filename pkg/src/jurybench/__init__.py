"""Twelve-juror deliberation benchmark: engine, backends, metrics, harness."""

__version__ = "0.1.0"
