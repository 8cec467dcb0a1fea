"""Switch the control on a short window and compare with the linear prediction.

The W_1 gap between the perturbed terminal swarm and its first-order
prediction should shrink like eps^2.

    python3 demos/needle_expansion.py
"""

import numpy as np

from mfpmp.controls import AffineBasis, ControlSignal, affine_control
from mfpmp.dynamics import GaussianGradient, LinearDrift, NonlocalField, simulate
from mfpmp.measures import uniform_measure
from mfpmp.transport import wasserstein
from mfpmp.variations import NeedleParams, needle_control, needle_first_order

rng = np.random.default_rng(1)
T, dt, tau = 1.0, 1e-4, 0.5
mu0 = uniform_measure(rng.uniform(-0.7, 0.7, size=(8, 1)))
field = NonlocalField(GaussianGradient(0.8, 1.0), LinearDrift([[0.2]]))
u = ControlSignal.from_params(AffineBasis(1), 0.3 * rng.normal(size=(4, 2)), np.linspace(0, T, 5))
base = simulate(field, u, mu0, T, dt)

needle = NeedleParams(affine_control([[0.4]], [0.8]), tau)
F_T = needle_first_order(field, u, base, needle).vectors[-1]
end = base.state(base.n_steps)

print(f"{'eps':>8} {'W1 gap':>12} {'gap/eps^2':>10}")
for eps in (1e-2, 3e-3, 1e-3, 3e-4):
    v = needle_control(u, NeedleParams(needle.omega, tau, eps))
    gap = wasserstein(1, simulate(field, v, mu0, T, dt).state(base.n_steps),
                      end.with_points(end.points + eps * F_T)).distance
    print(f"{eps:8.0e} {gap:12.3e} {gap / eps ** 2:10.4f}")
