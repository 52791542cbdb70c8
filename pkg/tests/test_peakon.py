"""Peakon dynamics, Lax traces and the exponent-scale calibration."""

import numpy as np
import pytest

from model.hamiltonian import check_gradients, euler_step
from model.peakon import (
    DEFAULT_EXPONENT_SCALE,
    PeakonState,
    calibrate_lax_convention,
    conserved_traces,
    kernel_derivative,
    lax_matrices,
    overtaking_state,
    peakon_hamiltonian,
    peakon_hamiltonian_fn,
    peakon_integrator,
    peakon_step,
    peakon_velocity,
    relative_drift,
    run_peakons,
    total_momentum,
)
from utils.errors import NumericalDomainError, UsageError


def test_state_validation():
    with pytest.raises(UsageError):
        PeakonState([0.0, 1.0], [1.0])
    with pytest.raises(UsageError):
        PeakonState([0.0], [1.0], kernel="cauchy")
    with pytest.raises(UsageError):
        PeakonState([0.0], [1.0], scale=0.0)


def test_two_peakon_energy():
    s = PeakonState([0.0, np.log(2.0)], [1.0, 2.0])
    assert peakon_hamiltonian(s) == pytest.approx(7.0)


def test_exponential_kernel_derivative_vanishes_at_origin():
    assert kernel_derivative(np.array(0.0), "exponential") == 0.0


@pytest.mark.parametrize("kernel", ["gaussian", "exponential"])
def test_gradients_match_finite_differences(kernel):
    s = PeakonState([-2.0, 0.5, 3.0], [1.2, 0.8, 0.4], kernel)
    H = peakon_hamiltonian_fn(kernel)
    assert H.value(s.batch()) == pytest.approx(peakon_hamiltonian(s))
    assert check_gradients(H, s.batch()) <= 1e-6


def test_velocity_is_half_the_position_rate():
    s = overtaking_state(3)
    grad_p = peakon_hamiltonian_fn().grad_p(s.batch())[:, 0]
    np.testing.assert_allclose(peakon_velocity(s, s.q), 0.5 * grad_p, rtol=1e-14)


def test_overtaking_state():
    s = overtaking_state(3)
    np.testing.assert_array_equal(s.q, [-4.0, 0.0, 4.0])
    np.testing.assert_array_equal(s.p, [1.5, 1.0, 0.5])
    assert overtaking_state(1).n == 1
    with pytest.raises(UsageError):
        overtaking_state(0)


@pytest.mark.parametrize("kernel", ["gaussian", "exponential"])
def test_total_momentum_is_conserved(kernel):
    s = overtaking_state(3, kernel)
    p0 = total_momentum(s)
    integrator = peakon_integrator(kernel, 1.0, 2)
    for _ in range(200):
        s = peakon_step(s, 0.01, integrator=integrator)
    assert total_momentum(s) == pytest.approx(p0, abs=1e-10)


def test_gaussian_energy_stays_bounded():
    s = overtaking_state(3, "gaussian")
    rows = run_peakons(s, 0.01, 500, m=2)
    assert relative_drift([r["H"] for r in rows]) <= 1e-3


@pytest.mark.slow
@pytest.mark.parametrize("m, bound", [(2, 1e-5), (3, 1e-8)])
def test_gaussian_energy_over_long_run(m, bound):
    s0 = overtaking_state(3, "gaussian")
    rows = run_peakons(s0, 1e-3, 20_000, m=m, every=10)
    drift = relative_drift([r["H"] for r in rows])
    assert drift <= bound

    H = peakon_hamiltonian_fn("gaussian")
    b = s0.batch()
    energy = [H.value(b)]
    for k in range(1, 20_001):
        b = euler_step(H, b, 1e-3)
        if k % 10 == 0:
            energy.append(H.value(b))
    assert relative_drift(energy) > 10.0 * max(drift, 1e-5)


def test_head_on_collision_is_symmetric():
    s = PeakonState([-2.0, 2.0], [1.0, -1.0], "gaussian")
    integrator = peakon_integrator("gaussian", 1.0, 2)
    for _ in range(50):
        s = peakon_step(s, 0.01, integrator=integrator)
    assert s.q[0] + s.q[1] == pytest.approx(0.0, abs=1e-6)
    assert s.p[0] + s.p[1] == pytest.approx(0.0, abs=1e-6)


def test_lax_matrices():
    s = overtaking_state(3)
    lax = lax_matrices(s)
    np.testing.assert_allclose(lax.L, lax.L.T)
    np.testing.assert_allclose(lax.P, -lax.P.T)
    np.testing.assert_allclose(np.diag(lax.L), s.p)


def test_lax_trace_of_square_is_the_energy():
    s = overtaking_state(3)
    traces = conserved_traces(lax_matrices(s, 0.5).L, 3)
    assert traces.shape == (2,)
    assert traces[0] == pytest.approx(peakon_hamiltonian(s))


def test_lax_matrices_need_positive_momenta():
    with pytest.raises(NumericalDomainError, match="index 1"):
        lax_matrices(PeakonState([0.0, 1.0], [1.0, -0.5]))


def test_trace_order_is_bounded_by_peakon_count():
    with pytest.raises(UsageError):
        conserved_traces(np.eye(2), 3)


def test_run_peakons_rows():
    rows = run_peakons(overtaking_state(3), 0.01, 10, every=5)
    assert len(rows) == 3
    assert list(rows[0]) == ["t", "q0", "q1", "q2", "p0", "p1", "p2", "H", "TrL2", "TrL3"]
    assert rows[-1]["t"] == pytest.approx(0.1)
    assert np.isfinite(rows[-1]["TrL3"])


def test_gaussian_rows_have_no_traces():
    rows = run_peakons(overtaking_state(3, "gaussian"), 0.01, 2)
    assert np.isnan(rows[-1]["TrL2"]) and np.isnan(rows[-1]["TrL3"])


def test_calibration_selects_half_scale():
    result = calibrate_lax_convention(overtaking_state(3), dt=0.01, t_final=1.0)
    drift = result["drift"]
    assert result["selected"] == DEFAULT_EXPONENT_SCALE
    assert drift[0.5] <= 1e-4
    assert drift[1.0] > 10.0 * drift[0.5]


def test_calibration_needs_exponential_kernel():
    with pytest.raises(UsageError):
        calibrate_lax_convention(overtaking_state(3, "gaussian"), 0.01, 0.1)


@pytest.mark.slow
def test_long_run_keeps_lax_traces():
    rows = run_peakons(overtaking_state(3), 1e-3, 20_000, m=2, every=100)
    assert relative_drift([r["TrL2"] for r in rows]) <= 1e-6
    assert relative_drift([r["TrL3"] for r in rows]) <= 1e-6
