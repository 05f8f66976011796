"""Numerical regularity experiments for divergence-form elliptic equations."""
from .coeff import EllipticityBounds, MatrixField, SymmetricTensor
from .mesh import Grid, ScalarField

__all__ = ["EllipticityBounds", "MatrixField", "SymmetricTensor", "Grid", "ScalarField"]
__version__ = "0.1.0"
