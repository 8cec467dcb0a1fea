import numpy as np
import pytest

from conftest import random_measure
from mfpmp.controls import (AffineBasis, ConstantBasis, ControlField, ControlSignal,
                            affine_control, constant_control)
from mfpmp.dynamics import GaussianGradient, LinearAttraction, NonlocalField, ZeroKernel, simulate
from mfpmp.functionals import ControlEnergy, Tracking, Variance
from mfpmp.measures import EmpiricalMeasure
from mfpmp.optimizer import total_cost
from mfpmp.problem import Problem
from mfpmp.variations import (NeedleParams, first_order_condition, flow_directional_derivative,
                              needle_control, needle_first_order, needle_grid,
                              perturbed_measure, transported_perturbation)


def _signal(rng, d=2, K=4, T=1.0, scale=0.3):
    basis = AffineBasis(d)
    return ControlSignal.from_params(basis, scale * rng.normal(size=(K, basis.n_params)),
                                     np.linspace(0, T, K + 1))


def test_needle_control_examples(rng):
    u = _signal(rng)
    omega = affine_control(np.eye(2), [1.0, 0.0])
    assert needle_control(u, NeedleParams(omega, 0.6, 0.0)) is u
    v = needle_control(u, NeedleParams(omega, 0.6, 0.1))
    replaced = [k for k, f in enumerate(v.fields) if f is omega]
    assert len(replaced) == 1
    k = replaced[0]
    assert v.time_grid[k] == pytest.approx(0.5) and v.time_grid[k + 1] == pytest.approx(0.6)
    same = needle_control(u, NeedleParams(u.at(0.6, left=True), 0.6, 0.1))
    for t in np.linspace(0, 0.999, 37):
        assert np.array_equal(same.at(t).theta, u.at(t).theta)
    with pytest.raises(ValueError):
        NeedleParams(omega, 0.1, 0.2)


def test_zero_data_gives_zero(rng):
    mu = random_measure(rng, 5, 2)
    u = _signal(rng)
    tr = simulate(NonlocalField(ZeroKernel()), u, mu, 1.0, 1e-2)
    F0 = rng.normal(size=(5, 2))
    assert not flow_directional_derivative(NonlocalField(ZeroKernel()), u, tr, F0).any()
    field = NonlocalField(GaussianGradient(0.8))
    tr = simulate(field, u, mu, 1.0, 1e-2)
    assert not flow_directional_derivative(field, u, tr, np.zeros((5, 2))).any()


def test_measure_independent_field_reduces_to_jacobian(rng):
    mu = random_measure(rng, 4, 2)
    u = _signal(rng)
    field = NonlocalField(ZeroKernel())
    tr = simulate(field, u, mu, 1.0, 1e-3, with_jacobians=True)
    F0 = rng.normal(size=(4, 2))
    F = transported_perturbation(field, u, tr, F0)
    assert np.allclose(F, np.einsum("knab,nb->kna", tr.jacobians, F0), atol=1e-8)


def _tracer_derivative(field, u, x_tau, w, F0, T, dt, eps):
    """Central difference of passive tracers in the flow of (I + eps F0)_# mu."""
    def tracers(e):
        pts = np.vstack([x_tau + e * F0, x_tau])
        weights = np.concatenate([w, np.zeros_like(w)])
        tr = simulate(field, u, EmpiricalMeasure(pts, weights), T, dt)
        return tr.positions[-1, len(w):]
    return (tracers(eps) - tracers(-eps)) / (2 * eps)


@pytest.mark.parametrize("kernel", [LinearAttraction(0.8), GaussianGradient(0.7, 1.0)])
def test_directional_derivative_against_finite_differences(rng, kernel):
    d, n, T, dt = 2, 5, 0.5, 1e-3
    mu = random_measure(rng, n, d, uniform=False, scale=0.6)
    field = NonlocalField(kernel)
    u = ControlSignal.constant(affine_control(0.3 * rng.normal(size=(d, d)),
                                              0.2 * rng.normal(size=d)), T)
    F0 = rng.normal(size=(n, d))
    tr = simulate(field, u, mu, T, dt)
    w = flow_directional_derivative(field, u, tr, F0)[-1]
    eps = 1e-3
    D1 = _tracer_derivative(field, u, mu.points, mu.weights, F0, T, dt, eps)
    D2 = _tracer_derivative(field, u, mu.points, mu.weights, F0, T, dt, eps / 2)
    rich = (4 * D2 - D1) / 3
    assert np.max(np.abs(w - rich)) <= 1e-5


def test_needle_field_examples(rng):
    mu = random_measure(rng, 5, 2)
    field = NonlocalField(GaussianGradient(0.8, 1.0))
    u = _signal(rng)
    tr = simulate(field, u, mu, 1.0, 1e-2)
    F = needle_first_order(field, u, tr, NeedleParams(u.at(0.6, left=True), 0.6))
    assert not F.vectors.any()
    b = ConstantBasis(2)
    uc = ControlSignal.from_params(b, rng.normal(size=(4, 2)), np.linspace(0, 1, 5))
    zf = NonlocalField(ZeroKernel())
    tr = simulate(zf, uc, mu, 1.0, 1e-2)
    omega = constant_control([1.0, 2.0])
    F = needle_first_order(zf, uc, tr, NeedleParams(omega, 0.5))
    # u*(0.5) is the control of the interval ending at 0.5
    assert np.allclose(F.vectors, omega.theta - uc.fields[1].theta)


def test_needle_field_initial_value(rng):
    mu = random_measure(rng, 5, 2)
    field = NonlocalField(LinearAttraction(1.0))
    u = _signal(rng)
    tr = simulate(field, u, mu, 1.0, 1e-2)
    omega = affine_control(rng.normal(size=(2, 2)), rng.normal(size=2))
    F = needle_first_order(field, u, tr, NeedleParams(omega, 0.3))
    x = tr.positions[30]
    assert np.array_equal(F.vectors[0], omega.value(x) - u.fields[1].value(x))


def test_linearity_in_initial_data(rng):
    mu = random_measure(rng, 6, 2)
    field = NonlocalField(GaussianGradient(0.6, 1.2))
    u = _signal(rng)
    tr = simulate(field, u, mu, 1.0, 1e-2)
    A, B = rng.normal(size=(2, 6, 2))
    fa = transported_perturbation(field, u, tr, A, 0.2)
    fb = transported_perturbation(field, u, tr, B, 0.2)
    fab = transported_perturbation(field, u, tr, A + B, 0.2)
    assert np.allclose(fab, fa + fb, atol=1e-10)


def test_needle_displacement_converges_first_order(rng):
    # (x_T(eps) - x_T) / eps -> F_T with error O(eps)
    mu = random_measure(rng, 4, 1)
    field = NonlocalField(GaussianGradient(0.8, 1.0))
    u = ControlSignal.from_params(AffineBasis(1), 0.3 * rng.normal(size=(2, 2)), [0, 0.5, 1.0])
    dt = 1e-4
    tr = simulate(field, u, mu, 1.0, dt)
    params = NeedleParams(affine_control([[0.5]], [1.0]), 0.4)
    FT = needle_first_order(field, u, tr, params).vectors[-1]
    errs = []
    epss = [1e-2, 1e-3, 1e-4]
    for eps in epss:
        v = needle_control(u, NeedleParams(params.omega, params.tau, eps))
        xT = simulate(field, v, mu, 1.0, dt).positions[-1]
        errs.append(np.max(np.abs((xT - tr.positions[-1]) / eps - FT)))
    slope = np.polyfit(np.log(epss), np.log(errs), 1)[0]
    assert slope >= 0.9


def _problem(rng, running):
    mu = random_measure(rng, 5, 1, scale=0.7)
    field = NonlocalField(LinearAttraction(0.7))
    return Problem(field, mu, 1.0, Variance(), running, dt=1e-3)


def test_first_order_condition_vanishes_for_same_control(rng):
    prob = _problem(rng, Tracking(0.4, 0.8, [0.5]))
    u = _signal(rng, d=1)
    tr = prob.simulate(u)
    assert first_order_condition(prob, u, tr, NeedleParams(u.at(0.5, left=True), 0.5)) == 0.0


@pytest.mark.parametrize("running", [None, ControlEnergy(0.5), Tracking(0.4, 0.8, [0.5])])
def test_first_order_condition_is_needle_derivative(rng, running):
    prob = _problem(rng, running)
    u = _signal(rng, d=1, K=4)
    tr = prob.simulate(u)
    omega = ControlField(AffineBasis(1), [0.4, -0.7])
    tau = 0.6
    foc = first_order_condition(prob, u, tr, NeedleParams(omega, tau))
    J0 = total_cost(prob, u, tr)
    D = {}
    for eps in (0.02, 0.01):
        D[eps] = (total_cost(prob, needle_control(u, NeedleParams(omega, tau, eps))) - J0) / eps
    rich = 2 * D[0.01] - D[0.02]
    assert foc == pytest.approx(rich, abs=2e-4 * (1 + abs(foc)))


def test_descent_needle_exists_off_optimum(rng):
    prob = _problem(rng, ControlEnergy(0.5))
    basis = AffineBasis(1)
    u = ControlSignal.from_params(basis, np.tile([0.8, 0.5], (4, 1)), np.linspace(0, 1, 5), 5.0)
    prob.c1_bound = 5.0
    tr = prob.simulate(u)
    vals = [first_order_condition(prob, u, tr, p) for p in needle_grid(prob, basis, tr, 5, 4)]
    assert min(vals) < -1e-3


def test_perturbed_measure(rng):
    mu = random_measure(rng, 3, 2, uniform=False)
    F = rng.normal(size=(3, 2))
    nu = perturbed_measure(mu, F, 0.1)
    assert np.allclose(nu.points, mu.points + 0.1 * F) and np.array_equal(nu.weights, mu.weights)
