"""Side-channel analysis workbench: simulated power and impedance leakage of
first-round AES-128, correlation key recovery, and comparison metrics."""

__version__ = "0.1.0"
