"""Transistor-level simulator and benchmark harness for a p-FeFET 6T nonvolatile SRAM."""

__version__ = "0.1.0"
