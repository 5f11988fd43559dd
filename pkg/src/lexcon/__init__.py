"""Hard and soft lexically constrained decoding toolkit."""

__version__ = "0.1.0"
