"""
A repeated single-item auction under the penalized mechanism
=============================================================

Two bidders with binary values compete for one item each day. Their values
are independent fair coins. We run the mechanism with truthful bidders and
look at what each day costs them.
"""

import numpy as np

from twostage import (MechanismParams, SimulationConfig, estimate_utility, estimate_welfare,
                      optimal_welfare, reference_game, run_simulation, truthful_strategy)

# the reference game: types {0, 1}, outcomes none/p1/p2, p1 wins ties
game, theta = reference_game()
print("optimal expected welfare:", optimal_welfare(game, theta))

# ten days first, so the ledger fits on a screen
cfg = SimulationConfig(game, [truthful_strategy()] * 2, theta,
                       MechanismParams(horizon=10), seed=7)
ledger = run_simulation(cfg)
print(ledger.to_csv())

# each player pays a fixed first-stage fee, then v(bid) - E[v] every day.
# nobody is penalized, so the second-stage transfers average out to zero
cfg = SimulationConfig(game, [truthful_strategy()] * 2, theta,
                       MechanismParams(horizon=50_000), seed=0)
ledger = run_simulation(cfg)
print("welfare per day:", estimate_welfare(ledger))
print("utilities:", [round(estimate_utility(ledger, i), 4) for i in range(2)])
print("days with a penalty:", ledger.penalty_flags.sum(axis=0))

# truthful utility is exactly the marginal contribution each day
print("first-stage fees:", ledger.p_first)
print("mean second-stage transfer:", np.round(ledger.p_second_base.mean(axis=0), 4))
