"""shapeop: shape-to-solution operator surrogates over a reference domain.

Subpackages
-----------
shape_param         affine-parametric shape atlases and diagnostics
pullback            coefficient/rhs transformations to the reference domain
fem                 P1 finite-element solver, norms, parametric derivatives
frames              frame/Riesz/ONB algebra, encoder/decoder pairs
surrogate_spectral  sparse polynomial interpolation surrogates
surrogate_nn        ReLU network surrogates and operator-network composition
bench               error measurement and empirical rate fitting
cli                 command-line entry point (``shapeop`` console script)
"""

from . import errors

__version__ = "0.1.0"
