"""k-space interpolation toolkit for view-shared parallel MRI."""

__version__ = "0.1.0"
