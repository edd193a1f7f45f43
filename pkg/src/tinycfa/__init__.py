"""Control-flow attestation toolchain for a simulated MSP430-class MCU."""

__version__ = "0.1.0"
