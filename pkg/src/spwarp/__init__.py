"""Regression with a prescribed number of stationary points.

The regression function is a simple template ``g`` (with stationary points
at fixed nodes) composed with a warping diffeomorphism ``gamma`` of [0, 1];
the stationary points of ``g o gamma`` are the preimages of the nodes.
"""

__version__ = "0.1.0"
