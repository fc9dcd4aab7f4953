"""reprlab: dual-memory pseudo-rehearsal for continual deep Q-learning."""

__version__ = "0.1.0"
