import numpy as np
import pytest

from model.generating_function import (
    GeneratingFunctionIntegrator,
    build_series,
    canonical_form,
    hamilton_jacobi_residual,
    symplectic_step,
    symplecticity_defect,
)
from model.hamiltonian import (
    PhaseBatch,
    constant_hamiltonian,
    euler_step,
    harmonic_flow,
    random_batch,
)
from model.resnet_ocp import reduced_hamiltonian_fn
from utils.errors import ConvergenceError, UnsupportedOrderError, UsageError

ORDER_STEPS = (0.1, 0.05, 0.025, 0.0125)


@pytest.mark.parametrize("m", [0, 4])
def test_unsupported_order(oscillator, m):
    with pytest.raises(UnsupportedOrderError):
        build_series(oscillator, m)


def test_series_terms_on_oscillator(oscillator, unit_point):
    S = build_series(oscillator, 3)
    q, p = 1.0, 0.5
    assert S.terms[0].value(unit_point) == pytest.approx(0.5 * (q * q + p * p))
    assert S.terms[1].value(unit_point) == pytest.approx(0.5 * q * p)
    assert S.terms[2].value(unit_point) == pytest.approx((q * q + p * p) / 6.0, rel=1e-8)


def test_first_order_step_is_symplectic_euler(oscillator, unit_point):
    dt = 0.1
    out = symplectic_step(build_series(oscillator, 1), unit_point, dt)
    p_new = 0.5 - dt * 1.0
    np.testing.assert_allclose(out.p, [[p_new]], atol=1e-12)
    np.testing.assert_allclose(out.q, [[1.0 + dt * p_new]], atol=1e-12)


def test_first_order_step_from_rest(oscillator):
    # p' = p - dt q and q' = q + dt p' with the old q in the momentum update
    s = PhaseBatch(np.array([[1.0]]), np.array([[0.0]]))
    out = symplectic_step(build_series(oscillator, 1), s, 0.1)
    np.testing.assert_allclose(out.p, [[-0.1]], atol=1e-12)
    np.testing.assert_allclose(out.q, [[0.99]], atol=1e-12)


def test_zero_step_is_identity(oscillator, unit_point):
    S = build_series(oscillator, 2)
    assert symplectic_step(S, unit_point, 0.0) is unit_point


def test_negative_step_rejected(oscillator, unit_point):
    with pytest.raises(UsageError):
        symplectic_step(build_series(oscillator, 1), unit_point, -0.1)


def test_constant_hamiltonian_is_identity_map(rng):
    s = random_batch(rng, 3, 2)
    out = GeneratingFunctionIntegrator.from_hamiltonian(constant_hamiltonian(2.0), 3)(s, 0.1)
    np.testing.assert_allclose(out.flat(), s.flat(), atol=1e-14)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_local_error_order(oscillator, unit_point, m):
    step = GeneratingFunctionIntegrator.from_hamiltonian(oscillator, m)
    errors = []
    for dt in ORDER_STEPS:
        out = step(unit_point, dt)
        errors.append(np.max(np.abs(out.flat() - harmonic_flow(unit_point, dt).flat())))
    slope = np.polyfit(np.log(ORDER_STEPS), np.log(errors), 1)[0]
    assert slope == pytest.approx(m + 1, abs=0.15)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_oscillator_steps_are_symplectic(oscillator, m):
    s = PhaseBatch(np.array([[0.7]]), np.array([[-0.4]]))
    step = GeneratingFunctionIntegrator.from_hamiltonian(oscillator, m)
    assert symplecticity_defect(step, s, 0.01) <= 1e-6


def test_euler_defect_on_oscillator(oscillator, unit_point):
    defect = symplecticity_defect(lambda s, dt: euler_step(oscillator, s, dt), unit_point, 0.01)
    assert defect == pytest.approx(1e-4, rel=1e-5)


@pytest.mark.parametrize("m", [1, 2, pytest.param(3, marks=pytest.mark.slow)])
def test_reduced_resnet_step_is_symplectic(small_batch, m):
    H = reduced_hamiltonian_fn(1.0, gradients="envelope")
    step = GeneratingFunctionIntegrator.from_hamiltonian(H, m)
    assert symplecticity_defect(step, small_batch, 0.01) <= 1e-6
    euler_defect = symplecticity_defect(lambda s, dt: euler_step(H, s, dt), small_batch, 0.01)
    assert euler_defect > 1e-7


@pytest.mark.parametrize("steps", [10_000, pytest.param(100_000, marks=pytest.mark.slow)])
def test_energy_stays_bounded_where_euler_drifts(oscillator, unit_point, steps):
    step = GeneratingFunctionIntegrator.from_hamiltonian(oscillator, 2)
    e0 = oscillator.value(unit_point)
    s = unit_point
    errors = np.empty(steps)
    for k in range(steps):
        s = step(s, 0.01)
        errors[k] = abs(oscillator.value(s) - e0)
    assert errors.max() <= 1e-4
    half = steps // 2
    assert errors[half:].max() <= 2.0 * errors[:half].max()

    s = unit_point
    for _ in range(steps):
        s = euler_step(oscillator, s, 0.01)
    assert abs(oscillator.value(s) - e0) > 1e-1


def test_canonical_form_is_skew():
    omega = canonical_form(3)
    np.testing.assert_array_equal(omega.T, -omega)
    np.testing.assert_array_equal(omega @ omega, -np.eye(6))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_hamilton_jacobi_residual_order(oscillator, unit_point, m):
    S = build_series(oscillator, m)
    coarse = abs(hamilton_jacobi_residual(S, unit_point, 0.1))
    fine = abs(hamilton_jacobi_residual(S, unit_point, 0.01))
    assert fine < coarse * 10.0 ** (1 - m)


def test_non_convergence_raises(oscillator, unit_point):
    with pytest.raises(ConvergenceError) as info:
        symplectic_step(build_series(oscillator, 2), unit_point, 0.5, max_iter=2)
    assert info.value.iterations == 2
    assert info.value.module == "generating_function"
