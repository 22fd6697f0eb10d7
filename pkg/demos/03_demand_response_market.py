"""
Allocating a curtailment among flexible consumers
=================================================

A utility must shed d units of load. Consumer i loses delta_i * x**2 / 2 when
asked to curtail x, and a reserve generator covers what is left at cost
delta_s * g**2 / 2. The optimal split equalizes marginal costs.
"""

import numpy as np

from twostage import dr_allocate, discretize_scaled_beta
from twostage.dr_market import build_dr_game, default_dr_spec, optimal_social_cost

alloc = dr_allocate([4.0, 2.0], delta_s=1.0, d=7.0)
print("curtailments:", alloc.curtailments, "reserve:", alloc.reserve)
print("common marginal cost:", alloc.multiplier)
print("social cost:", alloc.social_cost([4.0, 2.0], 1.0),
      "closed form:", optimal_social_cost(np.array([4.0, 2.0]), 1.0, 7.0))

# consumers' cost parameters come from a beta law on [0, 10] with mean 1 and
# variance 2, discretized onto a 16-point grid
theta = discretize_scaled_beta(0.35, 3.15, (0.1, 10.0), 16, beta_support=(0.0, 10.0))
grid = np.asarray(theta.types.labels, float)
p = theta.as_array()
print("grid:", np.round(grid, 2))
print("masses:", np.round(p, 3))
print("discrete mean:", grid @ p)

# the same market as a two-stage game: the first stage has one option, the
# second stage clears the market from bids
game = build_dr_game(default_dr_spec(3))
terms = game.expected_terms(game.spec.supertypes)
print("expected valuations:", np.round(terms.valuations, 4))
