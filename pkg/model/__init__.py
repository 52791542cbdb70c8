# GeoFlow Model Package
"""
Structure-preserving integrators and the systems they are applied to.
"""

__version__ = "0.1.0"
