"""Force-limited compliant control: barrier-function safety filter, contact simulation and CLI."""

__version__ = "0.1.0"
