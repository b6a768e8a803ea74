"""Column generation for CVRPTW with LA-arc pricing and graph-master
stabilization."""

__version__ = "0.1.0"
