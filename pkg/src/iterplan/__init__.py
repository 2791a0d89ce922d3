"""Iterator-based discrete-event task planning for a fixed-wing UAV."""

__version__ = "0.1.0"
