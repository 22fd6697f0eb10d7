"""
Posted prices versus the mechanism
==================================

A posted price p makes every consumer curtail p / delta_i and leaves the rest
to the reserve. Even the best price on the grid cannot match the mechanism,
which knows each consumer's cost parameter from their bid.
"""

from twostage.experiments import degenerate_gap, posted_price_comparison, social_cost_vs_n

res = posted_price_comparison(seeds=range(3), days=1000)
print(f"best posted price {res.prices[res.best_index]:.3f} "
      f"costs {res.mean_cost[res.best_index]:.3f}")
print(f"mechanism costs {res.mechanism_cost:.3f}, gap {res.gap:.3f}")

# with point-mass consumers a price exists that reproduces the optimum
print("gap on point masses:", degenerate_gap())

# more consumers share the load, so social cost falls with n
for n, cost, se in social_cost_vs_n(8, range(5), 1000):
    print(f"n={n}: {cost:.3f} +- {se:.3f}")
