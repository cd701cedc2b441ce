"""modelsink: synchronization middleware for distributed executable statechart models."""

__version__ = "0.1.0"
