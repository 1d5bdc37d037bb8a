"""Optional sentence-embedding sidecar for the portal toolkit."""

__version__ = "0.1.0"
