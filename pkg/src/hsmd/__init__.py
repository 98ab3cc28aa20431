"""Event-driven hard-sphere dynamics with collision-strength and tensor diagnostics."""

__version__ = "0.1.0"
