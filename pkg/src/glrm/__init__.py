"""Generalized low rank models for heterogeneous tables with missing entries."""

__version__ = "0.1.0"

from .analysis import CertificateError, certify_global, qrpca_objective, qrpca_problem, qrpca_solve
from .data import (Boolean, Categorical, Comparisons, DataError, DataTable, Interval, Ordinal,
                   Permutation, Real, parse_kind, read_csv, split_holdout, write_csv)
from .estimator import GLRM
from .fit import FitConfig, FitReport, InfeasibleStart, fit, fit_exact_quadratic, fit_stochastic, solve_rows
from .initialization import initialize
from .losses import LossDomainError, column_stats, default_loss, make_loss
from .model import Factors, GlrmProblem, ModelFormatError, impute_table, load_model, objective, save_model
from .regularizers import make_reg, parse_reg
from .select import cross_validate, metrics, precision_at, reg_path

__all__ = [
    "Boolean", "Categorical", "CertificateError", "Comparisons", "DataError", "DataTable", "Factors",
    "FitConfig", "FitReport", "GLRM", "GlrmProblem", "InfeasibleStart", "Interval", "LossDomainError",
    "ModelFormatError", "Ordinal", "Permutation", "Real", "certify_global", "column_stats",
    "cross_validate", "default_loss", "fit", "fit_exact_quadratic", "fit_stochastic", "impute_table",
    "initialize", "load_model", "make_loss", "make_reg", "metrics", "objective", "parse_kind",
    "parse_reg", "precision_at", "qrpca_objective", "qrpca_problem", "qrpca_solve", "read_csv",
    "reg_path", "save_model", "solve_rows", "split_holdout", "write_csv",
]
