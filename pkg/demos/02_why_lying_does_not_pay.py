"""
Deviations against the penalized mechanism
==========================================

Player 1 tries each strategy in the library while player 2 stays truthful.
Every run shares the same type draws (common random numbers), so the
advantage of truth-telling is a paired difference rather than two noisy averages.
"""

from twostage import (MechanismParams, SimulationConfig, deviation_gain, reference_game,
                      strategy_library, truthful_strategy)
from twostage.engine import run_simulation, running_utility

game, theta = reference_game()
base = SimulationConfig(game, [truthful_strategy()] * 2, theta,
                        MechanismParams(horizon=5000), seed=0)

for name, strategy in strategy_library(theta[0], 0, 2).items():
    gain = deviation_gain(base, 0, strategy, seeds=range(5))
    print(f"{name:22s} truthful ahead by {gain: .4f}")

# claiming the low type every day drifts away from the reported distribution.
# the frequency test notices, and penalties grow as l**2
lib = strategy_library(theta[0], 0, 2)
cfg = SimulationConfig(game, [lib["always_first"], truthful_strategy()], theta,
                       MechanismParams(horizon=5000), seed=0)
led = run_simulation(cfg)
u = running_utility(led, 0)
for day in (10, 100, 1000, 5000):
    print(f"day {day:5d}: running utility {u[day - 1]:.1f}")
