"""Welfare-optimal two-stage repeated games with penalized VCG-style payments."""

__version__ = "0.1.0"

from .game_core import (DecisionRuleSet, ExpectedTerms, GameSpec, GridSizeError,  # noqa: E402
                        InvalidInputError, Supertype, TwoStageGame, TypeSpace,
                        expected_welfare, optimal_first_stage, optimal_rules,
                        optimal_second_stage, optimal_welfare, reference_game)
from .mechanism import (DiscrepancyStats, InvalidBidError, MechanismParams,  # noqa: E402
                        PaymentBreakdown, correlation_h, discrepancy_f,
                        first_stage_payment, penalty_event, penalty_Jp,
                        second_stage_payment, total_payment, update_stats, window_r)
from .strategies import (correlated_mimic_strategy, marginal_match_check,  # noqa: E402
                         stationary_type_misreport, strategy_library, supertype_misreport,
                         truthful_strategy)
from .engine import (Ledger, SimulationConfig, deviation_gain, estimate_utility,  # noqa: E402
                     estimate_welfare, run_simulation, verify_product_form)
from .dr_market import (DrAllocation, DrGame, DrSpec, build_dr_game,  # noqa: E402
                        discretize_scaled_beta, dr_allocate, posted_price_response,
                        posted_price_sweep)
from .experiments import ExperimentConfig, run_experiment  # noqa: E402
