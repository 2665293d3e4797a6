"""Desk-scale multi-scale detector with a sparse expert-mixture branch,
agent-orchestrated tuning, and exact evaluation statistics."""

__version__ = "0.1.0"
