import numpy as np
import pytest

from data.datasets import generate_dataset
from model.generating_function import GeneratingFunctionIntegrator
from model.hamiltonian import PhaseBatch, check_gradients, euler_step, integrate
from model.resnet_ocp import (
    ControlParams,
    IntegratorKind,
    control_gradient,
    control_hamiltonian,
    costate_gradient,
    eliminate_control,
    euler_layer,
    forward_pass,
    loss_and_accuracy,
    parameter_gradient,
    readout,
    reduced_hamiltonian,
    reduced_hamiltonian_fn,
    symplectic_layer_step,
)
from utils.config import TrainConfig
from utils.errors import ConvergenceError, UsageError


def _objective(config, layers, inputs, labels):
    traj = forward_pass(config, layers, inputs)
    residual, _ = loss_and_accuracy(traj.final, labels, config.loss)
    reg = sum(th.norm_sq() for th in layers)
    return residual + 0.5 * config.gamma * config.dt * reg


def _small_problem(n=6):
    data = generate_dataset("circles", n, seed=3)
    return data.inputs, data.labels


def test_integrator_kind_parse():
    assert IntegratorKind.parse("RK4") is IntegratorKind.RK4
    assert IntegratorKind.parse(IntegratorKind.EULER) is IntegratorKind.EULER
    with pytest.raises(UsageError):
        IntegratorKind.parse("leapfrog")


def test_control_params_validation():
    with pytest.raises(UsageError):
        ControlParams(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(UsageError):
        ControlParams(np.full((2, 2), np.nan), np.zeros(2))
    theta = ControlParams.from_flat(np.arange(6.0), 2)
    np.testing.assert_array_equal(theta.b, [4.0, 5.0])


def test_control_gradient_matches_differences(small_batch, rng):
    theta = ControlParams(0.3 * rng.standard_normal((2, 2)), 0.3 * rng.standard_normal(2))
    analytic = control_gradient(small_batch, theta, 0.7).flat()
    x0 = theta.flat()
    h = 1e-6
    numeric = np.empty_like(x0)
    for k in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        numeric[k] = (control_hamiltonian(small_batch, ControlParams.from_flat(xp, 2), 0.7)
                      - control_hamiltonian(small_batch, ControlParams.from_flat(xm, 2), 0.7)) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_eliminated_control_is_stationary(small_batch):
    theta = eliminate_control(small_batch, 1.0)
    assert np.max(np.abs(control_gradient(small_batch, theta, 1.0).flat())) < 1e-10


def test_zero_costates_give_zero_control(rng):
    batch = PhaseBatch(rng.standard_normal((5, 2)), np.zeros((5, 2)))
    theta = eliminate_control(batch, 1.0)
    assert theta.norm_sq() == 0.0
    assert reduced_hamiltonian(batch, 1.0) == 0.0


def test_eliminate_control_rejects_nonpositive_gamma(small_batch):
    with pytest.raises(UsageError):
        eliminate_control(small_batch, 0.0)


def test_envelope_gradients_match_finite_differences(small_batch):
    H = reduced_hamiltonian_fn(1.0, gradients="envelope")
    assert check_gradients(H, small_batch) < 1e-6


def test_unknown_gradient_mode():
    with pytest.raises(UsageError):
        reduced_hamiltonian_fn(1.0, gradients="autodiff")


def test_symplectic_layer_matches_first_order_generating_step(small_batch):
    dt = 0.1
    layer = symplectic_layer_step(small_batch, dt, 1.0)
    step = GeneratingFunctionIntegrator.from_hamiltonian(reduced_hamiltonian_fn(1.0, "envelope"), 1)
    reference = step(small_batch, dt)
    np.testing.assert_allclose(layer.flat(), reference.flat(), atol=1e-8)


def test_symplectic_layer_zero_step(small_batch):
    assert symplectic_layer_step(small_batch, 0.0, 1.0) is small_batch


def test_readout_uses_first_coordinate():
    prob = readout(np.array([[0.0, 5.0], [100.0, -3.0]]))
    np.testing.assert_allclose(prob, [0.5, 1.0])


def test_loss_and_accuracy_values():
    final = np.array([[10.0, 0.0], [-10.0, 0.0], [10.0, 0.0]])
    labels = np.array([1, 0, 0])
    residual, accuracy = loss_and_accuracy(final, labels)
    assert accuracy == pytest.approx(2.0 / 3.0)
    assert residual == pytest.approx(1.0, abs=1e-3)
    ce, _ = loss_and_accuracy(final, labels, "cross_entropy")
    assert ce == pytest.approx(10.0, abs=1e-3)
    with pytest.raises(UsageError):
        loss_and_accuracy(final, labels, "hinge")


def test_forward_pass_shapes_and_euler_layers(rng):
    inputs, _ = _small_problem()
    config = TrainConfig(n_layers=3, dt=0.1, integrator="euler")
    layers = [ControlParams(0.2 * rng.standard_normal((2, 2)), 0.1 * rng.standard_normal(2))
              for _ in range(3)]
    traj = forward_pass(config, layers, inputs)
    assert traj.q.shape == (4, 6, 2)
    assert traj.p is None
    np.testing.assert_allclose(traj.q[1], euler_layer(inputs, layers[0], 0.1))


def test_forward_pass_checks_layer_count(rng):
    inputs, _ = _small_problem()
    config = TrainConfig(n_layers=3, integrator="rk4")
    with pytest.raises(UsageError):
        forward_pass(config, [ControlParams.zeros(2)], inputs)


def test_symplectic_forward_pass_checks_costate_shape():
    inputs, _ = _small_problem()
    config = TrainConfig(n_layers=2, integrator="symplectic")
    with pytest.raises(UsageError):
        forward_pass(config, np.zeros((5, 2)), inputs)


def test_symplectic_forward_pass_tags_failing_layer(rng):
    inputs, _ = _small_problem()
    config = TrainConfig(n_layers=2, integrator="symplectic", max_iter=1)
    with pytest.raises(ConvergenceError) as info:
        forward_pass(config, 0.1 * rng.standard_normal(inputs.shape), inputs)
    assert info.value.step == 0
    assert info.value.module == "resnet_ocp.forward_pass"


@pytest.mark.parametrize("integrator", ["euler", "rk4"])
def test_parameter_gradient_matches_differences(rng, integrator):
    inputs, labels = _small_problem()
    config = TrainConfig(n_layers=3, dt=0.2, gamma=0.5, integrator=integrator)
    layers = [ControlParams(0.5 * rng.standard_normal((2, 2)), 0.3 * rng.standard_normal(2))
              for _ in range(3)]
    grads, _ = parameter_gradient(config, layers, inputs, labels)

    h = 1e-6
    for k in range(3):
        x0 = layers[k].flat()
        numeric = np.empty_like(x0)
        for j in range(x0.size):
            xp, xm = x0.copy(), x0.copy()
            xp[j] += h
            xm[j] -= h
            plus = layers[:k] + [ControlParams.from_flat(xp, 2)] + layers[k + 1:]
            minus = layers[:k] + [ControlParams.from_flat(xm, 2)] + layers[k + 1:]
            numeric[j] = (_objective(config, plus, inputs, labels)
                          - _objective(config, minus, inputs, labels)) / (2 * h)
        np.testing.assert_allclose(grads[k].flat(), numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("loss", ["squared", "cross_entropy"])
def test_costate_gradient_matches_differences(rng, loss):
    inputs, labels = _small_problem()
    config = TrainConfig(n_layers=3, dt=0.1, gamma=1.0, integrator="symplectic", tol=1e-14,
                         loss=loss)
    p0 = 0.05 * rng.standard_normal(inputs.shape)
    grad, traj = costate_gradient(config, p0, inputs, labels)
    assert traj.p.shape == (4, 6, 2)

    def objective(p):
        return loss_and_accuracy(forward_pass(config, p, inputs).final, labels, loss)[0]

    h = 1e-5
    numeric = np.empty_like(p0)
    for idx in np.ndindex(p0.shape):
        pp, pm = p0.copy(), p0.copy()
        pp[idx] += h
        pm[idx] -= h
        numeric[idx] = (objective(pp) - objective(pm)) / (2 * h)
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("integrator", ["euler", "rk4", "symplectic"])
def test_trajectories_follow_sample_order(rng, integrator):
    inputs, _ = _small_problem()
    config = TrainConfig(n_layers=4, dt=0.1, integrator=integrator, tol=1e-14)
    if integrator == "symplectic":
        state = 0.05 * rng.standard_normal(inputs.shape)
    else:
        state = [ControlParams(0.3 * rng.standard_normal((2, 2)), 0.1 * rng.standard_normal(2))
                 for _ in range(4)]
    order = rng.permutation(inputs.shape[0])
    base = forward_pass(config, state, inputs)
    shuffled_state = state[order] if integrator == "symplectic" else state
    shuffled = forward_pass(config, shuffled_state, inputs[order])
    np.testing.assert_allclose(shuffled.q, base.q[:, order], rtol=0.0, atol=1e-12)
    if integrator == "symplectic":
        np.testing.assert_allclose(shuffled.p, base.p[:, order], rtol=0.0, atol=1e-12)


def test_reduced_hamiltonian_along_symplectic_layers(rng):
    data = generate_dataset("circles", 20, seed=3)
    config = TrainConfig(n_layers=50, dt=0.075, integrator="symplectic")
    p0 = 0.005 * rng.standard_normal(data.inputs.shape)
    traj = forward_pass(config, p0, data.inputs)
    energy = np.array([reduced_hamiltonian(PhaseBatch(traj.q[k], traj.p[k]), config.gamma)
                       for k in range(len(traj))])
    assert np.max(np.abs(energy - energy[0])) <= 1e-3

    H = reduced_hamiltonian_fn(config.gamma, gradients="envelope")
    states = integrate(euler_step, H, PhaseBatch(data.inputs, p0), config.dt, config.n_layers)
    drift = np.abs(np.array([H.value(s) for s in states]) - H.value(states[0]))
    assert np.all(np.diff(drift) >= 0.0)
    assert drift[-1] >= 10.0 * drift[1]
