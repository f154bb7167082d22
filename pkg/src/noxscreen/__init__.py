"""NOx high-emitter screening from on-board monitoring and remote sensing data."""

__version__ = "0.1.0"
