"""Covariate-dependent Cholesky decomposition (CDCD) for subject-specific covariance matrices."""
from .model import (BetaMatrix, CholeskyModel, Dataset, InputError, PhiTensor, SubjectCov, assemble,
                    build_D, build_T, predict_mean_adjust)
from .estimator import fit_cdcd

__version__ = "0.1.0"

__all__ = ["BetaMatrix", "CholeskyModel", "Dataset", "InputError", "PhiTensor", "SubjectCov", "assemble",
           "build_D", "build_T", "predict_mean_adjust", "fit_cdcd", "__version__"]
