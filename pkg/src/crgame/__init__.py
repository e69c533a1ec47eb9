"""Two-firm repeated inventory-pricing game with Bayesian demand learning.

Simulation engine, credible-risk policies, belief-grid equilibrium solver,
and a Monte Carlo experiment harness, with numba-accelerated hot kernels
and a pure-numpy fallback (select via the CRGAME_BACKEND env var).
"""

__version__ = "0.1.0"

from .market import (Action, DemandParams, FirmType, MarketState,
                     PeriodOutcome, censor_sales, latent_demand,
                     one_period_profit, simulate_period, step_inventory)
from .learning import (ObservationRecord, PosteriorDegenerateError,
                       PosteriorHyper, TypeBelief, batch_conjugate_posterior,
                       conjugate_update, gibbs_refresh, online_update,
                       posterior_mse, sample_truncated_latent,
                       truncated_normal_lower, truncated_normal_upper,
                       update_type_belief)
from .policy import (POLICIES, ActionScore, BeliefState, PolicyConfig,
                     credible_risk_score, expected_profit_closed_form,
                     expected_sales_closed_form, forecast_rival_action,
                     predictive_draws, predictive_profit_moments,
                     select_action)
from .equilibrium import (BeliefGrid, DiscretizedDynamics, EquilibriumConfig,
                          EquilibriumModel, GridPolicy, IterationDiagnostics,
                          NonConvergenceError, ValueFunction, bellman_apply,
                          build_belief_grid, build_dynamics, contraction_check,
                          equilibrium_iteration, myopic_policy, value_iterate)
from .simharness import (BootstrapReport, ExperimentSummary, PolicySummary,
                         ReplicationRecord, SimConfig, bootstrap_diff,
                         dominance_curve, relative_improvement,
                         run_experiment, run_replication, summarize_relative)
from . import kernels, rng

__all__ = [name for name in dir() if not name.startswith("_")]
