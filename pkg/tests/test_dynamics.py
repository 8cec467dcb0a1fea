import numpy as np
import pytest
from scipy.linalg import expm

from conftest import random_measure
from mfpmp.controls import (AffineBasis, ControlSignal, affine_control,
                            constant_control)
from mfpmp.dynamics import (ConstantDrift, GaussianGradient, LinearAttraction,
                            LinearDrift, NonlocalField, SimulationError, ZeroKernel,
                            _rhs, contractivity_check, eval_velocity, jacobian_flow,
                            kernel_jacobians, make_kernel, simulate, support_bound)
from mfpmp.measures import dirac, mean, support_radius, uniform_measure, variance
from mfpmp.transport import w1


def test_eval_velocity_examples(rng):
    a = 0.7
    mu = random_measure(rng, 6, 2, uniform=False)
    x = rng.normal(size=(4, 2))
    field = NonlocalField(LinearAttraction(a))
    direct = np.array([sum(w * a * (y - xi) for w, y in zip(mu.weights, mu.points)) for xi in x])
    assert np.allclose(eval_velocity(field, None, mu, 0.0, x), direct)
    assert np.allclose(eval_velocity(field, None, mu, 0.0, x), a * (mean(mu) - x))
    b = np.array([1.0, -2.0])
    v = eval_velocity(NonlocalField(ZeroKernel()), constant_control(b), mu, 0.0, x)
    assert np.allclose(v, b)
    c = np.array([0.5, 0.5])
    assert np.allclose(eval_velocity(field, None, dirac(c), 0.0, x[0]), a * (c - x[0]))


def test_kernel_jacobians_closed_forms():
    dx, dy = kernel_jacobians(LinearAttraction(1.3), 0.0, [0.1, 0.2], [1.0, -1.0])
    assert np.allclose(dx, -1.3 * np.eye(2)) and np.allclose(dy, 1.3 * np.eye(2))
    dx, dy = kernel_jacobians(ZeroKernel(), 0.0, [0.1, 0.2], [1.0, -1.0])
    assert not dx.any() and not dy.any()
    with pytest.raises(ValueError):
        make_kernel("morse")


@pytest.mark.parametrize("d", [1, 2, 3])
def test_gaussian_kernel_jacobians_against_finite_differences(rng, d):
    k = GaussianGradient(0.9, 1.4)
    h = 1e-5
    for _ in range(5):
        x, y = rng.normal(size=d) * 0.6, rng.normal(size=d) * 0.6
        dx, dy = kernel_jacobians(k, 0.0, x, y)
        H = lambda a, b: k.value(0.0, a[None], b[None])[0, 0]
        fdx = np.column_stack([(H(x + h * e, y) - H(x - h * e, y)) / (2 * h) for e in np.eye(d)])
        fdy = np.column_stack([(H(x, y + h * e) - H(x, y - h * e)) / (2 * h) for e in np.eye(d)])
        assert np.allclose(dx, fdx, rtol=1e-6, atol=1e-9 * np.abs(dx).max())
        assert np.allclose(dy, fdy, rtol=1e-6, atol=1e-9 * np.abs(dy).max())


def test_gaussian_kernel_formula():
    k = GaussianGradient(0.5, 1.0)
    x, y = np.array([[0.3, 0.0]]), np.array([[0.0, 0.4]])
    diff = x[0] - y[0]
    expected = -(2 / 0.25) * np.exp(-diff @ diff / 0.25) * diff
    assert np.allclose(k.value(0.0, x, y)[0, 0], expected)


@pytest.mark.parametrize("kernel", [LinearAttraction(0.8), GaussianGradient(0.7, 1.2)])
def test_sampled_lipschitz_bound(rng, kernel):
    field = NonlocalField(kernel, LinearDrift([[0.2, 0.1], [0.0, -0.3]]))
    L1, L2, _ = field.lipschitz_bounds
    mu = random_measure(rng, 10, 2)
    nu = random_measure(rng, 10, 2)
    for _ in range(50):
        x, y = rng.uniform(-2, 2, size=(2, 1, 2))
        gap = np.linalg.norm(field.velocity(0, x, mu.points, mu.weights)
                             - field.velocity(0, y, mu.points, mu.weights))
        assert gap <= L1 * np.linalg.norm(x - y) * (1 + 1e-12)
        gap = np.linalg.norm(field.velocity(0, x, mu.points, mu.weights)
                             - field.velocity(0, x, nu.points, nu.weights))
        assert gap <= L2 * w1(mu, nu) * (1 + 1e-9)


def test_zero_field_is_stationary(rng):
    mu = random_measure(rng, 5, 2)
    tr = simulate(NonlocalField(ZeroKernel()), None, mu, 0.5, 0.01)
    assert all(np.array_equal(p, mu.points) for p in tr.positions)


def test_constant_control_translates(rng):
    mu = random_measure(rng, 5, 2)
    b = np.array([0.3, -0.2])
    u = ControlSignal.constant(constant_control(b), 1.0)
    tr = simulate(NonlocalField(ZeroKernel()), u, mu, 1.0, 0.01)
    for t, p in zip(tr.times, tr.positions):
        assert np.allclose(p, mu.points + t * b, atol=1e-13)


def test_linear_attraction_closed_form(rng):
    a = 0.9
    mu = random_measure(rng, 12, 2, uniform=False)
    tr = simulate(NonlocalField(LinearAttraction(a)), None, mu, 1.0, 1e-3)
    m = mean(mu)
    for k in range(0, tr.n_steps + 1, 100):
        t = tr.times[k]
        assert np.allclose(tr.positions[k], m + np.exp(-a * t) * (mu.points - m), atol=1e-10)
        assert variance(tr.state(k)) == pytest.approx(np.exp(-2 * a * t) * variance(mu),
                                                      abs=1e-6)
        assert np.allclose(mean(tr.state(k)), m, atol=1e-12)


def test_weights_conserved(rng):
    mu = random_measure(rng, 7, 2, uniform=False)
    tr = simulate(NonlocalField(GaussianGradient(0.8)), None, mu, 0.3, 1e-2)
    assert np.array_equal(tr.weights, mu.weights)
    assert all(np.array_equal(tr.state(k).weights, mu.weights) for k in (0, 10, 30))


def _rk4_step(field, omega, x, w, h):
    k1 = _rhs(field, omega, 0, x, w)
    k2 = _rhs(field, omega, 0, x + 0.5 * h * k1, w)
    k3 = _rhs(field, omega, 0, x + 0.5 * h * k2, w)
    k4 = _rhs(field, omega, 0, x + h * k3, w)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def test_time_reversibility(rng):
    field = NonlocalField(GaussianGradient(0.8, 1.0), LinearDrift([[0, -1], [1, 0]]))
    omega = affine_control([[0.1, 0.2], [-0.3, 0.0]], [0.1, 0.0])
    mu = random_measure(rng, 9, 2)
    for h in (0.1, 0.05):
        x = _rk4_step(field, omega, mu.points, mu.weights, h)
        back = _rk4_step(field, omega, x, mu.weights, -h)
        # one step forth and back: local error O(h^5) per particle
        assert np.max(np.abs(back - mu.points)) <= 50 * h ** 5 * mu.n


def test_rk4_order():
    a = 1.5
    mu = uniform_measure([[0.0, 1.0], [2.0, -1.0], [-1.0, 0.5]])
    omega = affine_control([[0.0, 0.4], [-0.4, 0.0]], [0.2, 0.1])
    field = NonlocalField(LinearAttraction(a))
    u = ControlSignal.constant(omega, 1.0)
    # closed form: the mean moves by omega alone, deviations by (A - a I)
    A, b = np.array([[0.0, 0.4], [-0.4, 0.0]]), np.array([0.2, 0.1])
    m0 = mean(mu)
    m1 = expm(A) @ m0 + np.linalg.solve(A, (expm(A) - np.eye(2)) @ b)
    dev = (expm(A - a * np.eye(2)) @ (mu.points - m0).T).T
    exact = m1 + dev
    errs = [np.max(np.abs(simulate(field, u, mu, 1.0, dt).positions[-1] - exact))
            for dt in (0.1, 0.05, 0.025)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.7), orders


def test_support_bound(rng):
    field = NonlocalField(GaussianGradient(0.6, 2.0), ConstantDrift([0.5, 0.0]))
    mu = random_measure(rng, 8, 2)
    u = ControlSignal.constant(affine_control(0.5 * np.eye(2), [0.3, 0.3]), 1.0)
    tr = simulate(field, u, mu, 1.0, 1e-2)
    R = support_bound(field, u, mu, 1.0)
    assert max(support_radius(tr.state(k)) for k in range(tr.n_steps + 1)) <= R


def test_blow_up_guard(monkeypatch):
    import mfpmp.dynamics as dyn
    u = ControlSignal.constant(affine_control([[5.0]], [0.0]), 1.0)
    # radius bound (1 + 1) e^5; a factor 1e-2 puts the limit near 3
    monkeypatch.setattr(dyn, "BLOWUP_FACTOR", 1e-2)
    with pytest.raises(SimulationError, match="left the ball"):
        simulate(NonlocalField(ZeroKernel()), u, uniform_measure([[1.0]]), 1.0, 0.1)


def test_support_bound_does_not_overflow():
    u = ControlSignal.constant(affine_control([[1e4]], [0.0]), 1.0)
    assert np.isfinite(support_bound(NonlocalField(ZeroKernel()), u, uniform_measure([[1.0]]), 1.0))


def test_dt_must_divide_control_intervals():
    u = ControlSignal.from_params(AffineBasis(1), np.zeros((3, 2)), [0, 0.25, 0.5, 1.0])
    with pytest.raises(ValueError, match=r"\[0, 0.25\]|\[0.0, 0.25\]"):
        simulate(NonlocalField(ZeroKernel()), u, uniform_measure([[0.0]]), 1.0, 0.1)


def test_jacobian_flow_examples(rng):
    mu = random_measure(rng, 4, 2)
    W = jacobian_flow(NonlocalField(ZeroKernel()), None, mu, 0.2, 0.01)
    assert np.allclose(W, np.eye(2))
    A = np.array([[0.1, 0.7], [-0.5, 0.2]])
    u = ControlSignal.constant(affine_control(A, [0.0, 0.0]), 1.0)
    W = jacobian_flow(NonlocalField(ZeroKernel()), u, mu, 1.0, 1e-3)
    for k in (250, 1000):
        assert np.allclose(W[k], expm(k * 1e-3 * A), atol=1e-7)
    a = 0.6
    W = jacobian_flow(NonlocalField(LinearAttraction(a)), None, mu, 1.0, 1e-3)
    assert np.allclose(W[-1], np.exp(-a) * np.eye(2), atol=1e-10)


def test_contractivity_examples(rng):
    mu = random_measure(rng, 5, 2)
    nu = mu.with_points(mu.points + 0.01)
    _, ratio, _ = contractivity_check(NonlocalField(ZeroKernel()), None, mu, nu, 0.5, 0.01)
    assert np.allclose(ratio, 1.0)
    nu = random_measure(rng, 5, 2)
    _, ratio, _ = contractivity_check(NonlocalField(LinearAttraction(1.0)), None, mu, nu,
                                      1.0, 0.01, every=10)
    assert np.all(ratio <= 1 + 1e-9)
    _, ratio, env = contractivity_check(NonlocalField(GaussianGradient(0.5, 1.0)), None,
                                        mu, nu, 1.0, 0.01, every=10)
    assert np.all(ratio <= env * (1 + 1e-9))
    with pytest.raises(ValueError):
        contractivity_check(NonlocalField(ZeroKernel()), None, mu, mu, 1.0, 0.1)
