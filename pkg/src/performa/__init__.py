"""Performative prediction with neural predictors on finite atom sets:
the resample-if-rejected shift with exact densities and certified
sensitivity constants, the repeated-retraining loop with contraction
diagnostics, and the closed-form oscillation counterexample."""

from .counterexample import CEConfig, ce_run, ce_rrm_step, ce_verify_assumptions
from .distribution import (EmpiricalBase, InducedDistribution,
                           SensitivityReport, certify_sensitivity, chi2,
                           norm_ratio, rir_density, rir_sample, w1_1d)
from .harness import (DatasetSpec, SweepGrid, SyntheticSpec, gen_synthetic,
                      load_dataset, run_experiment)
from .predictor import (ParamGrads, PredictorParams, WeightedSample,
                        fd_gradient, forward, forward_batch,
                        functional_distance, init_params, loss, loss_grad,
                        param_gradient)
from .training import (RRMConfig, RRMTrace, accuracy, minimize_risk,
                       oracle_distance, performative_risk, rrm, stable_oracle,
                       tabular_rrm, tabular_rrm_step)

__version__ = "0.1.0"
