"""Pay-gap decomposition: raw, explained and unexplained gaps under common support."""

__version__ = "0.1.0"
