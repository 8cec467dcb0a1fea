import numpy as np
import pytest

from conftest import random_measure
from mfpmp.controls import (AffineBasis, ConstantBasis, ControlField, ControlSignal,
                            RBFBasis, constant_control)
from mfpmp.dynamics import GaussianGradient, LinearAttraction, LinearDrift, NonlocalField, ZeroKernel
from mfpmp.functionals import (ControlEnergy, GaussianBump, PotentialEnergy, TargetAttraction,
                               Tracking, Variance)
from mfpmp.measures import uniform_measure, variance
from mfpmp.optimizer import optimize, parameter_gradient, total_cost
from mfpmp.problem import Problem


def lq_problem(x0=0.5, target=2.0, lam=0.5, T=1.0):
    # one particle, x' = u, cost lam int u^2 + (x_T - target)^2; optimum u = (target - x0)/(lam + T)
    prob = Problem(NonlocalField(ZeroKernel()), uniform_measure([[x0]]), T,
                   TargetAttraction([target]), ControlEnergy(lam), dt=1e-3, c1_bound=10.0)
    return prob, (target - x0) / (lam + T)


def test_total_cost_examples(rng):
    mu = random_measure(rng, 6, 2)
    prob = Problem(NonlocalField(ZeroKernel()), mu, 1.0, Variance(), dt=1e-2)
    u = ControlSignal.constant(constant_control([0.0, 0.0]), 1.0)
    assert total_cost(prob, u) == pytest.approx(variance(mu), rel=1e-14)
    lam, b = 0.3, np.array([0.4, -1.1])
    prob.running = ControlEnergy(lam)
    u = ControlSignal.constant(constant_control(b), 1.0)
    assert total_cost(prob, u) == pytest.approx(variance(mu) + lam * b @ b, rel=1e-12)
    a = 0.8
    prob = Problem(NonlocalField(LinearAttraction(a)), mu, 1.0, Variance(), dt=1e-3)
    assert total_cost(prob, u.with_params([[0.0, 0.0]])) == pytest.approx(
        np.exp(-2 * a) * variance(mu), abs=1e-10)


def _random_problem(rng):
    d = int(rng.integers(1, 3))
    mu = random_measure(rng, 4, d, uniform=False, scale=0.7)
    kernel = [LinearAttraction(rng.uniform(0.2, 1.0)),
              GaussianGradient(rng.uniform(0.5, 1.2), rng.uniform(-1, 1))][int(rng.integers(2))]
    field = NonlocalField(kernel, LinearDrift(0.3 * rng.normal(size=(d, d))))
    terminal = [Variance(), TargetAttraction(rng.normal(size=d)),
                PotentialEnergy(GaussianBump(rng.normal(size=d), 1.0), 1.5)][int(rng.integers(3))]
    running = [None, ControlEnergy(0.4), Tracking(0.3, 0.6, rng.normal(size=d))][int(rng.integers(3))]
    basis = [AffineBasis(d), ConstantBasis(d)][int(rng.integers(2))]
    prob = Problem(field, mu, 1.0, terminal, running, dt=1e-3)
    u = ControlSignal.from_params(basis, 0.4 * rng.normal(size=(4, basis.n_params)),
                                  np.linspace(0, 1, 5))
    return prob, u


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(20):
        prob, u = _random_problem(rng)
        g = parameter_gradient(prob, u)
        E = rng.normal(size=g.shape)
        h = 1e-4
        fd = (total_cost(prob, u.with_params(u.params + h * E))
              - total_cost(prob, u.with_params(u.params - h * E))) / (2 * h)
        assert np.sum(g * E) == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_gradient_vanishes_at_lq_optimum():
    prob, b = lq_problem()
    u = ControlSignal.from_params(ConstantBasis(1), np.full((5, 1), b), np.linspace(0, 1, 6), 10.0)
    assert np.linalg.norm(parameter_gradient(prob, u)) <= 1e-6
    run = optimize(prob, u, tol=1e-6)
    assert run.converged and len(run.iterates) == 1


def test_zero_sensitivity_parameter():
    mu = uniform_measure([[0.0], [0.5]])
    prob = Problem(NonlocalField(ZeroKernel()), mu, 1.0, Variance(), ControlEnergy(0.2), dt=1e-2)
    basis = RBFBasis([[0.0], [100.0]], 0.5)
    # the second bump sits far from the particles
    u = ControlSignal.constant(ControlField(basis, [0.3, 0.7]), 1.0)
    g = parameter_gradient(prob, u)
    assert g[0, 1] == 0.0 and g[0, 0] != 0.0


def test_lq_converges_from_random_start(rng):
    prob, b = lq_problem()
    u0 = ControlSignal.from_params(ConstantBasis(1), rng.normal(size=(10, 1)),
                                   np.linspace(0, 1, 11), 10.0)
    run = optimize(prob, u0, tol=1e-8)
    assert run.converged
    assert np.max(np.abs(run.control.params - b)) <= 1e-4
    costs = run.costs
    assert np.all(np.diff(costs) < 0)


def test_iterates_feasible_and_monotone(rng):
    mu = uniform_measure(rng.normal(0.0, 0.8, size=(6, 1)))
    prob = Problem(NonlocalField(LinearAttraction(0.3)), mu, 1.0, Variance(), ControlEnergy(0.05),
                   dt=1e-3, c1_bound=0.8)
    basis = AffineBasis(1)
    u0 = ControlSignal.from_params(basis, np.zeros((4, 2)), np.linspace(0, 1, 5), 0.8)
    run = optimize(prob, u0, max_iters=15)
    for it in run.iterates:
        assert all(f.c1_norm(prob.working_radius) <= 0.8 * (1 + 1e-12) for f in it.control.fields)
    assert np.all(np.diff(run.costs) < 0)
    assert run.cost <= run.iterates[0].cost
