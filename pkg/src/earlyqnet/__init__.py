"""Discrete-event simulator for a centrally controlled early quantum network."""

__version__ = "0.1.0"
