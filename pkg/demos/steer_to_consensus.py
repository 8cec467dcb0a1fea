"""Optimise an affine feedback that shrinks a 1-d swarm, then test the optimum.

    python3 demos/steer_to_consensus.py
"""

import numpy as np

from mfpmp.controls import AffineBasis, ControlSignal
from mfpmp.dynamics import LinearAttraction, NonlocalField
from mfpmp.functionals import ControlEnergy, Variance
from mfpmp.measures import uniform_measure, variance
from mfpmp.optimizer import optimize
from mfpmp.problem import Problem
from mfpmp.pmp import default_candidates, maximization_check, stationarity_check

rng = np.random.default_rng(0)
mu0 = uniform_measure(rng.normal(0.0, 0.8, size=(24, 1)))

problem = Problem(NonlocalField(LinearAttraction(0.3)), mu0, 1.0, Variance(),
                  ControlEnergy(0.2), dt=1e-3, c1_bound=20.0)
u0 = ControlSignal.from_params(AffineBasis(1), np.zeros((10, 2)), np.linspace(0, 1, 11), 20.0)

run = optimize(problem, u0, max_iters=200, tol=1e-7)
print(f"cost {run.iterates[0].cost:.5f} -> {run.cost:.5f} in {len(run.iterates) - 1} iterations "
      f"({run.message})")
print(f"variance at T: {variance(run.trajectory.state(run.trajectory.n_steps)):.5f} "
      f"(uncontrolled {variance(problem.simulate(u0).state(1000)):.5f})")
print("feedback gain A on each interval:", np.round(run.control.params[:, 0], 3))

cands = default_candidates(problem, run.control.basis)
for report in (maximization_check(problem, run.trajectory, run.costate, run.control, cands),
               stationarity_check(problem, run.trajectory, run.costate, run.control)):
    s = report.summary()
    print(f"{s['name']}: passed={s['passed']} checked={s['n_times']} "
          f"skipped={s['n_skipped']} worst slack={s['worst_slack']:.2e}")
