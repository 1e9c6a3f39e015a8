"""Echo-state network RNN-T toolkit."""

__version__ = "0.1.0"
