"""VoI-censored distributed information filtering."""

__version__ = "0.1.0"
