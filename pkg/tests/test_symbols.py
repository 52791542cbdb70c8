import numpy as np
import pytest

from model.symbols import (
    EXACT_CHECKS,
    GridFunction,
    Symbol,
    binomial,
    commutator,
    compose,
    dual_exponent,
    dx,
    exp_first_order,
    functional_derivative,
    is_group_element,
    lie_poisson_bracket,
    pairing,
    property_suite,
    tangent_lift_left,
    tangent_lift_right,
    trace,
)
from utils.errors import UsageError

NX = 32
SPACING = 2.0 * np.pi / NX


def _x():
    return SPACING * np.arange(NX)


def test_grid_function_validation():
    with pytest.raises(UsageError):
        GridFunction(np.ones(3), 0.1)
    with pytest.raises(UsageError):
        GridFunction(np.ones(8), 0.0)
    f = GridFunction.on_circle(np.ones(8))
    assert f.integral() == pytest.approx(2.0 * np.pi)


def test_mesh_mismatch_rejected():
    with pytest.raises(UsageError):
        GridFunction(np.ones(8), 0.1) + GridFunction(np.ones(8), 0.2)
    a = Symbol.identity(8, 0.1)
    b = Symbol.identity(16, 0.1)
    with pytest.raises(UsageError):
        compose(a, b)


def test_centered_difference_of_sine():
    f = GridFunction(np.sin(_x()), SPACING)
    expected = np.cos(_x()) * np.sin(SPACING) / SPACING
    np.testing.assert_allclose(dx(f).values, expected, atol=1e-13)
    with pytest.raises(UsageError):
        dx(f, 0)


def test_binomial_generalised():
    assert binomial(3, 2) == 3.0
    assert binomial(-1, 2) == 1.0
    assert binomial(-2, 3) == -4.0
    assert binomial(1, 2) == 0.0


def test_identity_is_neutral(rng):
    A = Symbol.random(rng, NX, SPACING, (-2, -1, 0, 1))
    I = Symbol.identity(NX, SPACING)
    for product in (compose(I, A), compose(A, I)):
        for k in A.exponents:
            np.testing.assert_array_equal(product.coeff(k), A.coeff(k))


def test_xi_times_function():
    f = np.sin(_x())
    out = compose(Symbol({1: np.ones(NX)}, NX, SPACING), Symbol({0: f}, NX, SPACING))
    np.testing.assert_array_equal(out.coeff(1), f)
    np.testing.assert_allclose(out.coeff(0), dx(GridFunction(f, SPACING)).values)


def test_truncation_records_dropped_exponents():
    xi2 = Symbol({2: np.ones(NX)}, NX, SPACING)
    out = compose(xi2, xi2)
    assert out.dropped == (4,)
    assert out.max_abs() == 0.0
    with pytest.raises(UsageError):
        compose(xi2, xi2, trunc=(1, 0))


def test_trace_reads_minus_one_coefficient():
    f = np.cos(_x()) + 2.0
    assert trace(Symbol({-1: f, 0: np.ones(NX)}, NX, SPACING)) == pytest.approx(4.0 * np.pi)


def test_trace_of_commutator_vanishes(rng):
    A = Symbol.smooth_random(rng, NX, (-3, -2, -1))
    B = Symbol.smooth_random(rng, NX, (0, 1, 2))
    assert abs(trace(commutator(A, B))) < 1e-12
    assert pairing(A, B) == pytest.approx(pairing(B, A), abs=1e-12)


def test_dual_exponent():
    assert dual_exponent(0) == -1
    assert dual_exponent(-1) == 0
    assert dual_exponent(2) == -3


def test_functional_derivative_of_linear_functional(rng):
    M = Symbol.smooth_random(rng, NX, (0, 1))
    N = Symbol.smooth_random(rng, NX, (-1, -2))
    D = functional_derivative(lambda S: pairing(N, S), M)
    assert D.exponents == (-2, -1)
    for k in (-1, -2):
        np.testing.assert_allclose(D.coeff(k), N.coeff(k), atol=1e-6)


def test_functional_derivative_rejects_bad_step(rng):
    M = Symbol.smooth_random(rng, NX, (0,))
    with pytest.raises(UsageError):
        functional_derivative(lambda S: 0.0, M, h_fd=0.0)


def test_group_elements(rng):
    U = Symbol.smooth_random(rng, NX, (-2, -1))
    g = exp_first_order(U)
    assert is_group_element(g)
    assert not is_group_element(U)
    with pytest.raises(UsageError):
        exp_first_order(Symbol.smooth_random(rng, NX, (0,)))
    X = Symbol.smooth_random(rng, NX, (0, 1))
    with pytest.raises(UsageError):
        tangent_lift_left(U, X)
    np.testing.assert_array_equal(tangent_lift_right(g, X).coeff(1), compose(X, g).coeff(1))


def test_lie_poisson_bracket_is_antisymmetric(rng):
    nx = 16
    M = Symbol.smooth_random(rng, nx, (-1, 0))
    N = Symbol.smooth_random(rng, nx, (0, -1))

    def F(S):
        return pairing(N, S)

    def H(S):
        return 0.5 * pairing(S, S)

    fh = lie_poisson_bracket(F, H, M)
    hf = lie_poisson_bracket(H, F, M)
    assert fh == pytest.approx(-hf, abs=1e-12)
    assert lie_poisson_bracket(H, H, M) == 0.0


def test_json_document(rng):
    A = Symbol.random(rng, 8, 0.25, (-1, 2))
    doc = A.to_dict()
    assert doc["mesh"] == {"n": 8, "dx": 0.25}
    assert sorted(doc["coeffs"]) == ["-1", "2"]
    back = Symbol.from_json(A.to_json())
    np.testing.assert_array_equal(back.coeff(2), A.coeff(2))
    with pytest.raises(UsageError):
        Symbol.from_dict({"coeffs": {}})


def test_property_suite_exact_checks(rng):
    defects = property_suite(rng, trials=5, nx=NX)
    assert set(EXACT_CHECKS) <= set(defects)
    for name in EXACT_CHECKS:
        assert defects[name] < 1e-9, name
    assert np.isfinite(defects["associativity_full"])
    assert np.isfinite(defects["jacobi_full"])


@pytest.mark.slow
def test_property_suite_full_run():
    defects = property_suite(np.random.default_rng(0), trials=100, nx=64)
    for name in EXACT_CHECKS:
        assert defects[name] <= 1e-10, name
