"""High-precision simulation and period analysis for multi-plane slit interferometers."""
__version__ = "0.1.0"
