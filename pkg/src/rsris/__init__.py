"""Rate-splitting transmit design for multicell MIMO networks with
reconfigurable surfaces, I/Q imbalance and improper Gaussian signaling."""

__version__ = "0.1.0"
