from .linalg import SpdSystem, cholesky_solve
from .rng import (
    RngStream,
    derive_seed,
    sample_gamma,
    sample_normal,
    sample_poisson,
    sample_uniform,
    sample_uniform_cube,
    sample_uniform_sphere,
    substream,
)
from .special import inverse_regularized_gamma_q, regularized_gamma_q

__all__ = [
    "RngStream",
    "SpdSystem",
    "cholesky_solve",
    "derive_seed",
    "inverse_regularized_gamma_q",
    "regularized_gamma_q",
    "sample_gamma",
    "sample_normal",
    "sample_poisson",
    "sample_uniform",
    "sample_uniform_cube",
    "sample_uniform_sphere",
    "substream",
]
