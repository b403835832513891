"""Causal route gating laboratory."""

__version__ = "0.1.0"
SCHEMA_VERSION = "crglab.report/1"
