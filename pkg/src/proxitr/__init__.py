"""Learning and evaluating individualized treatment regimes under
unmeasured confounding with proxy variables.

The package estimates outcome and treatment confounding bridges by
closed-form kernel min-max programs, learns sign-based treatment rules by
weighted surrogate classification (outcome, treatment, maximum, and doubly
robust cross-fitted variants), evaluates policies through identified value
functionals with influence-function confidence intervals, and ships a
synthetic scenario generator with analytic ground truth.
"""
from .bridges import (BridgePair, BridgeTuning, BridgeTuningReport, KernelExpansion,
                      fit_bridges, solve_h, solve_q, tau, tune_h, tune_q, varsigma)
from .data import SampleTable, Standardization, standardize
from .errors import (ContractViolationError, DegenerateDataError, InvalidArgumentError,
                     NumericOverflowError, ProxitrError)
from .evaluate import (ValueEstimate, value_dr, value_oracle_ipw,
                       value_oracle_noise_free, value_outcome, value_treatment)
from .kernels import (KernelSpec, NystromMap, gamma_quantile_grid, gram,
                      hsic_bandwidth, hsic_score, median_bandwidth, nystrom_fit)
from .policy import (HINGE, SMOOTHED_HINGE, AggregateDecision, FoldPlan, LearnReport,
                     LinearDecision, Policy, PolicyTuning, SurrogateLoss, dr_weights,
                     fit_weighted_classifier, learn_dr, learn_maximum, learn_outcome,
                     learn_treatment, make_fold_plan)
from .simgen import (SCENARIO_NAMES, AnalyticBridges, GeneratedData, OraclePolicies,
                     SimScenario, analytic_bridges, generate, noise_free_testset,
                     oracle_policies, scenario)

__version__ = "0.1.0"
