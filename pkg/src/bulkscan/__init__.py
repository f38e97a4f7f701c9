"""Bulk feature extraction with recursive decoding and forensic-path provenance."""

__version__ = "0.1.0"
