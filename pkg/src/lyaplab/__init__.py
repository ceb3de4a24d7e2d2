"""lyaplab: a numerical laboratory for derivatives of integrated Lyapunov
exponents of volume-preserving torus maps with dominated splittings.

The package cross-validates closed-form first and second derivatives of the
integrated exponent against finite-difference oracles, together with the
finite-dimensional eigenvalue model that motivates them and the Fourier
convolution-regularity machinery controlling the low-smoothness regime.
"""

__version__ = "0.1.0"

__all__ = [
    "errors",
    "matrix_lab",
    "field_calculus",
    "families",
    "splitting",
    "derivatives",
    "regularity",
    "cli",
]
