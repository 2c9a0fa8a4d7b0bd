"""sc2codec: streamable MDCT-domain neural speech codec toolkit."""

__version__ = "0.1.0"
