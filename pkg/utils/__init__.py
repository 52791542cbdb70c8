# GeoFlow Utilities Package
"""
Logging, errors, configuration and run-artifact persistence.
"""
