"""Domain-adversarial training with virtual pose synthesis for single-sample-per-person recognition."""

__version__ = "0.1.0"
