"""Gaussian-process classification of sequences with signature covariances."""

from .errors import (IllConditionedKernelError, InvalidInputError, OracleScaleExceeded,
                     TrainingDivergedError)
from .sequences import (AugmentedSequence, Sequence, SequenceBatch, augment, increments,
                        subsample, tabulate)
from .static import StaticKernelParams, init_lengthscales, kappa, kappa_double_diff
from .sigkernel import (GramBlock, InducingTensor, SigKernelParams, cov_cross, cov_inducing,
                        cov_sequences, var_sequences)

__all__ = [
    "AugmentedSequence", "GramBlock", "IllConditionedKernelError", "InducingTensor",
    "InvalidInputError", "OracleScaleExceeded", "Sequence", "SequenceBatch", "SigKernelParams",
    "StaticKernelParams", "TrainingDivergedError", "augment", "cov_cross", "cov_inducing",
    "cov_sequences", "increments", "init_lengthscales", "kappa", "kappa_double_diff",
    "subsample", "tabulate", "var_sequences",
]
__version__ = "0.1.0"
