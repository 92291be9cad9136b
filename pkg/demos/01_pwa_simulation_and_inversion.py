"""Simulate a two-location PWA system, invert it and look at non-uniqueness.

Run: python3 demos/01_pwa_simulation_and_inversion.py
"""

import numpy as np

from pwainv import LocationMatrices, PwaModel, check_assumptions, global_relative_degree, invert, simulate
from pwainv.inversion import enumerate_implicit_solutions

# A lightly damped oscillator whose damping switches on the sign of the velocity state.
B, C = [1.0, 0.5], [1.0, 0.0]
slow = LocationMatrices.make([[0.9, 0.2], [-0.2, 0.7]], B, C=C)
fast = LocationMatrices.make([[0.9, 0.2], [-0.2, 0.5]], B, C=C)
model = PwaModel.from_locations([slow, fast], P=[[0.0, 1.0]], w=[0.0], signatures=[[(1,)], [(0,)]])

print("relative degree:", global_relative_degree(model).to_dict())
# A6 (switching read from the output) only gates relative-degree-2 inversion.
print("assumptions:", {k: v["passed"] for k, v in check_assumptions(model).to_dict().items() if isinstance(v, dict)})

rng = np.random.default_rng(1)
u = rng.uniform(-1, 1, 60)
sim = simulate(model, np.zeros(2), u)
print("locations visited:", np.bincount(sim.locations))

# The inverse reads the output one step ahead and reconstructs the input.
inv = invert(model)
u_hat = inv.simulate(sim.y.values[inv.mu_tilde:]).y.values
print(f"round-trip error: {np.max(np.abs(u_hat - u[: len(u_hat)])):.2e}")

# When the switching surface depends on the input channel, one output can have two preimages.
A1, A2 = [[0.0, 1.0], [0.0, 0.0]], [[0.0, 2.0], [0.0, 0.0]]
twin = PwaModel.from_locations(
    [LocationMatrices.make(A1, [0.0, 1.0], C=C), LocationMatrices.make(A2, [0.0, 1.0], C=C)],
    P=[[0.0, 1.0]], w=[1.5], signatures=[[(1,)], [(0,)]],
)
print("inputs reaching y=2 two steps later:", enumerate_implicit_solutions(twin, 0, [0.0, 0.0], 2.0, future_u=[0.0]))
