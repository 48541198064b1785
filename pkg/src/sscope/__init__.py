"""Desk-scale laboratory for layer-wise localization of shortcut learning."""

__version__ = "0.1.0"
