# This file makes the scaf package importable
__version__ = "0.1.0"
