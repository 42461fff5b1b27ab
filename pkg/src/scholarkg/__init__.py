"""scholarkg: desk-scale interdisciplinary scholarly knowledge-graph pipeline."""

__version__ = "0.1.0"
