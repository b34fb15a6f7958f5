"""Temperature-scan analysis of posterior collapse in linear Gaussian beta-VAEs."""

__version__ = "0.1.0"
