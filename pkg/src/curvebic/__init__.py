"""Curvature-corrected BIC for linear, hierarchical and mixed models.

BIC_HES adds log det of the observed information at the MLE to the usual
BIC. The package fits the models, computes the curvature by central
differences, reports the standard criteria next to it, estimates Bayes
factors (Laplace and posterior-draw based) and runs selection-rate studies.
"""
from .core import (CriteriaReport, CurvatureResult, Dataset, Family, FitResult,
                   GroupedDataset, ModelSpec, dataset_to_csv, load_dataset, parse_rows,
                   read_rows, validate_dataset)
from .criteria import (ALL_CRITERIA, CriterionKind, Evidence, Strength, bf_from_bic_delta,
                       bf_from_bic_hes_delta, compute_criteria, icomp_complexity,
                       interpret_bf, log_bf_hierarchical, select_model)
from .curvature import (HessianConfig, hierarchical_logdet_closed_form, log_det_information,
                        numerical_hessian, observed_information)
from .fitters import fit, fit_glmm, fit_hierarchical_normal, fit_linear, fit_lmm
from .kernels import BACKEND
from .bayes import (BayesModel, PosteriorDraws, estimated_log_bf, laplace_marginal,
                    log_bf_laplace, lpd_hat, metropolis_sample, posterior_mode)
from .simlab import (GlmmStudyConfig, LinearStudyConfig, MixedStudyConfig, StudyResult,
                     consistency_curve, gen_glmm, gen_linear, gen_mixed, run_study)

__version__ = "0.1.0"
