from echo_asr.numerics.linalg import (
    DenseMatrix,
    SparseMatrix,
    as_dense,
    estimate_spectral_radius,
    sparse_matvec,
)
from echo_asr.numerics.prng import Prng, derive_seed, prng_uniform, splitmix64

__all__ = [
    "DenseMatrix",
    "Prng",
    "SparseMatrix",
    "as_dense",
    "derive_seed",
    "estimate_spectral_radius",
    "prng_uniform",
    "sparse_matvec",
    "splitmix64",
]
