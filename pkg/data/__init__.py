# GeoFlow Data Package
"""
Deterministic benchmark datasets.
"""
