# %% [markdown]
# # Estimating a control value function
#
# Three admissible controls (zero and a pushed mode in either direction),
# piecewise-constant strategies on two segments, enstrophy running cost.

# %%
import numpy as np

from scbf.control import ControlSet, StrategyClass, dpp_residual, enstrophy_cost_spec, estimate_value
from scbf.dynamics import TrajectoryConfig
from scbf.noise import CovarianceSpec
from scbf.operators import PhysicalParams
from scbf.spectral_core import SpectralGrid, VelocityField, random_field

grid = SpectralGrid(2, 32)
e = VelocityField.single_mode(grid, (1, 0), (0.0, 1.0))
e = e * (1 / e.h_norm())
controls = ControlSet((VelocityField.zeros(grid), e, e * -1.0), 1.0)
cost = enstrophy_cost_spec(1.0)
cfg = TrajectoryConfig(0.0, 0.1, 0.05, PhysicalParams(0.5, 1.0, 1.0, 4.0), CovarianceSpec(5.0, 0.5), 1)
knots = (0.0, 0.05, 0.1)
strategies = StrategyClass.enumerate(knots, len(controls))
y0 = e * 0.8 + random_field(grid, np.random.default_rng(0), h_norm=0.2)

# %% Value estimate and the best strategy.
est = estimate_value(0.0, y0, controls, cost, cfg, 200, strategies, master_seed=1)
print(f"value {est.mean:.5f} +- {est.std_error:.5f}, best strategy {strategies.choices[est.best_strategy_index]}")

# %% Dynamic programming check at the middle knot (small budgets for speed).
rep = dpp_residual(0.0, y0, 0.05, controls, cost, cfg, (100, 20), strategies, master_seed=1)
print(f"direct {rep.lhs:.5f}  split {rep.rhs:.5f}  residual {rep.residual:.2e}  3 SE {3 * rep.combined_se:.2e}")
