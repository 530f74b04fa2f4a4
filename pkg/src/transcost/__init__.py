"""Net present value of medical costs from censored multi-state event histories."""

__version__ = "0.1.0"

from .cost_estimators import (CostPanel, CostProcess, CostTable, PanelSet, bang_tsiatis_npv,
                              build_panel_set, build_panels, lin_interval_npv, strawderman_npv,
                              total_cost_triples)
from .costdata import (interval_occupancy_data, single_transition_data, sojourn_log_rate_data,
                       transition_cost_data)
from .cox import CoxFit, CoxSpec, fit_cox, predict_profile
from .design import DesignRecipe, Term
from .errors import InvariantViolation, TranscostError
from .event_history import (EventHistory, StateSpace, TransitionEvent, build_event_history,
                            counting_processes, sojourn_table)
from .markov import (CumulativeIntensityMatrix, TransitionMatrixPath, aalen_johansen, nelson_aalen,
                     product_integral_parametric)
from .npv import (CovariateProfile, InitialDistribution, NpvReport, PiecewiseRates, QualityWeights,
                  TransitionCostModel, discounted_life_expectancy, empirical_initial_distribution,
                  npv_profile, npv_single_transition_cov, piecewise_sojourn_npv, qaly)
from .regression import (CostRegressionData, ReFit, estimate_variance_components,
                         fit_weighted_gee, fit_weighted_gls, ipc_weights, sandwich_variance)
from .simulator import (ScenarioSpec, oracle_lin_bias, oracle_npv, oracle_npv_marginal,
                        simulate_cohort)
from .stepfn import StepFunction
from .survival import SurvivalFit, censoring_km, censoring_survival, kaplan_meier, survival_fit

__all__ = [name for name in dir() if not name.startswith("_")]
