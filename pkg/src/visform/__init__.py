"""visform: vision-based distributed formation control, simulated end to end."""

__version__ = "0.1.0"
