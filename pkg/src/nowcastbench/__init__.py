"""Benchmark engine for GNSS-driven precipitation nowcasting."""

__version__ = "0.1.0"
