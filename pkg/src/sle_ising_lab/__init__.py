"""Critical Ising interfaces versus partition-function SLE(3)."""

__version__ = "0.1.0"
