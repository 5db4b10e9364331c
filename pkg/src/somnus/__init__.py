"""SleepNet / DreamNet desk-scale laboratory."""

__version__ = "0.1.0"
