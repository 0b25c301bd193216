"""Planar multibody simulation and separable-subsystem feedback linearization
for an amputee walking with a powered transfemoral prosthesis."""

__version__ = "0.1.0"
