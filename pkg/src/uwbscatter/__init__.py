"""Simulator for ultra-wideband backscatter tag localization below the noise floor."""

__version__ = "0.1.0"
