"""
GeoFlow: Discrete Pseudodifferential Symbols
============================================
Laurent polynomials in a formal frequency xi whose coefficients are periodic
grid functions,

    A(x_j, xi) = sum_k a_k(x_j) xi^k,

with the graded product

    (A o B)(xi) = sum_alpha (1/alpha!) d_xi^alpha A(xi) * Dx^alpha B(xi),

where d_xi acts formally on exponents and Dx is the centered periodic
difference. The trace is the xi^-1 coefficient summed against dx; the pairing
of two symbols is the trace of their product.

Centered differences do not satisfy a discrete Leibniz rule, so the product is
associative exactly only on the leading exponent (or when the middle factor
has x-independent coefficients); elsewhere the defect is O(dx^2).
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from utils.errors import UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_RANGE = (-4, 2)
MIN_POINTS = 4

ExponentRange = Tuple[int, int]


@dataclass(frozen=True)
class GridFunction:
    """Samples of a periodic function on a uniform 1D mesh."""
    values: np.ndarray
    dx: float

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if values.size < MIN_POINTS:
            raise UsageError(f"grid functions need at least {MIN_POINTS} points, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise UsageError("grid function values must be finite")
        if not self.dx > 0:
            raise UsageError(f"mesh spacing must be positive, got {self.dx}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dx", float(self.dx))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def mesh(self) -> Tuple[int, float]:
        return self.n, self.dx

    def nodes(self) -> np.ndarray:
        return self.dx * np.arange(self.n)

    def like(self, values) -> "GridFunction":
        return GridFunction(values, self.dx)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.dx)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        check_mesh(self.mesh, other.mesh)
        return self.like(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        check_mesh(self.mesh, other.mesh)
        return self.like(self.values - other.values)

    def __mul__(self, other) -> "GridFunction":
        if isinstance(other, GridFunction):
            check_mesh(self.mesh, other.mesh)
            return self.like(self.values * other.values)
        return self.like(self.values * float(other))

    __rmul__ = __mul__

    @classmethod
    def on_circle(cls, values) -> "GridFunction":
        """Grid function on [0, 2 pi) with len(values) points."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, 2.0 * np.pi / values.size)


def check_mesh(a: Tuple[int, float], b: Tuple[int, float]) -> None:
    if a[0] != b[0] or a[1] != b[1]:
        raise UsageError(f"mesh mismatch: {a} vs {b}")


def diff_values(values: np.ndarray, h: float, order: int) -> np.ndarray:
    out = values
    for _ in range(order):
        out = (np.roll(out, -1) - np.roll(out, 1)) / (2.0 * h)
    return out


def dx(f: GridFunction, order: int = 1) -> GridFunction:
    """
    Centered second-order periodic difference, applied `order` times.

    Args:
        f: Grid function
        order: Number of applications, >= 1
    """
    if int(order) < 1:
        raise UsageError(f"difference order must be >= 1, got {order}")
    return f.like(diff_values(f.values, f.dx, int(order)))


def binomial(k: int, alpha: int) -> float:
    """Generalised binomial coefficient k(k-1)...(k-alpha+1)/alpha! for integer k."""
    num = 1.0
    for r in range(alpha):
        num *= (k - r)
    return num / math.factorial(alpha)


@dataclass(frozen=True)
class Symbol:
    """
    Discrete symbol sum_k a_k xi^k on a shared periodic mesh.

    Attributes:
        coeffs: exponent -> coefficient samples
        n: mesh points
        spacing: mesh spacing
        dropped: exponents with nonzero contributions that a truncation removed
    """
    coeffs: Dict[int, np.ndarray]
    n: int
    spacing: float
    dropped: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.n < MIN_POINTS:
            raise UsageError(f"symbols need at least {MIN_POINTS} mesh points, got {self.n}")
        clean = {}
        for k, v in self.coeffs.items():
            arr = np.array(v, dtype=np.float64, copy=True).ravel()
            if arr.size != self.n:
                raise UsageError(f"coefficient xi^{k} has {arr.size} samples, mesh has {self.n}")
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"coefficient xi^{k} is not finite")
            arr.setflags(write=False)
            clean[int(k)] = arr
        object.__setattr__(self, "coeffs", dict(sorted(clean.items())))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "dropped", tuple(sorted(set(self.dropped))))

    @property
    def mesh(self) -> Tuple[int, float]:
        return self.n, self.spacing

    @property
    def exponents(self) -> Tuple[int, ...]:
        return tuple(self.coeffs)

    def coeff(self, k: int) -> np.ndarray:
        """Coefficient of xi^k (zeros if absent)."""
        return self.coeffs.get(int(k), np.zeros(self.n))

    def grid(self, k: int) -> GridFunction:
        return GridFunction(self.coeff(k), self.spacing)

    def span(self) -> ExponentRange:
        if not self.coeffs:
            return (0, 0)
        return min(self.coeffs), max(self.coeffs)

    def __add__(self, other: "Symbol") -> "Symbol":
        check_mesh(self.mesh, other.mesh)
        keys = set(self.coeffs) | set(other.coeffs)
        return Symbol({k: self.coeff(k) + other.coeff(k) for k in keys}, self.n, self.spacing,
                      self.dropped + other.dropped)

    def __sub__(self, other: "Symbol") -> "Symbol":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "Symbol":
        return Symbol({k: c * v for k, v in self.coeffs.items()}, self.n, self.spacing, self.dropped)

    def max_abs(self, exponents: Optional[Iterable[int]] = None) -> float:
        keys = self.coeffs if exponents is None else exponents
        vals = [float(np.max(np.abs(self.coeff(k)))) for k in keys]
        return max(vals) if vals else 0.0

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def zero(cls, n: int, spacing: float) -> "Symbol":
        return cls({}, n, spacing)

    @classmethod
    def identity(cls, n: int, spacing: float) -> "Symbol":
        return cls({0: np.ones(n)}, n, spacing)

    @classmethod
    def monomial(cls, f: GridFunction, k: int) -> "Symbol":
        return cls({int(k): f.values}, f.n, f.dx)

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, spacing: float,
               exponents: Iterable[int], scale: float = 1.0) -> "Symbol":
        return cls({int(k): scale * rng.standard_normal(n) for k in exponents}, n, spacing)

    @classmethod
    def smooth_random(cls, rng: np.random.Generator, n: int, exponents: Iterable[int],
                      modes: int = 3) -> "Symbol":
        """Band-limited random coefficients on [0, 2 pi)."""
        x = 2.0 * np.pi * np.arange(n) / n
        coeffs = {}
        for k in exponents:
            c = rng.standard_normal(2 * modes + 1)
            vals = c[0] * np.ones(n)
            for m in range(1, modes + 1):
                vals = vals + (c[2 * m - 1] * np.cos(m * x) + c[2 * m] * np.sin(m * x)) / m
            coeffs[int(k)] = vals
        return cls(coeffs, n, 2.0 * np.pi / n)

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "mesh": {"n": self.n, "dx": self.spacing},
            "coeffs": {str(k): v.tolist() for k, v in self.coeffs.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Symbol":
        try:
            mesh = data["mesh"]
            coeffs = {int(k): np.asarray(v, dtype=np.float64) for k, v in data["coeffs"].items()}
            return cls(coeffs, int(mesh["n"]), float(mesh["dx"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"malformed symbol document: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Symbol":
        return cls.from_dict(json.loads(text))


# =============================================================================
# PRODUCT, COMMUTATOR, TRACE, PAIRING
# =============================================================================

def compose(A: Symbol, B: Symbol, trunc: ExponentRange = DEFAULT_RANGE) -> Symbol:
    """
    Graded product of two symbols, truncated to an exponent window.

    Args:
        A: Left factor
        B: Right factor
        trunc: Inclusive (lowest, highest) exponent to keep

    Returns:
        Symbol whose `dropped` lists exponents removed by the window
    """
    check_mesh(A.mesh, B.mesh)
    lo, hi = int(trunc[0]), int(trunc[1])
    if lo > hi:
        raise UsageError(f"empty truncation window {trunc}")
    h = A.spacing
    out: Dict[int, np.ndarray] = {}
    dropped = set(A.dropped) | set(B.dropped)
    derivative_cache: Dict[Tuple[int, int], np.ndarray] = {}

    def diff_b(l: int, alpha: int) -> np.ndarray:
        key = (l, alpha)
        if key not in derivative_cache:
            b = B.coeffs[l]
            derivative_cache[key] = b if alpha == 0 else diff_values(b, h, alpha)
        return derivative_cache[key]

    for k, a in A.coeffs.items():
        for l in B.coeffs:
            alpha = 0
            while True:
                if k >= 0 and alpha > k:
                    break
                e = k + l - alpha
                c = binomial(k, alpha)
                if e < lo:
                    if np.any(a != 0) and np.any(diff_b(l, alpha) != 0):
                        dropped.add(e)
                    break
                term = c * a * diff_b(l, alpha)
                if e > hi:
                    if np.any(term != 0):
                        dropped.add(e)
                else:
                    out[e] = out[e] + term if e in out else term
                alpha += 1

    return Symbol(out, A.n, A.spacing, tuple(dropped))


def commutator(A: Symbol, B: Symbol, trunc: ExponentRange = DEFAULT_RANGE) -> Symbol:
    """[A, B] = A o B - B o A."""
    return compose(A, B, trunc) - compose(B, A, trunc)


def trace(A: Symbol) -> float:
    """Residue trace: the xi^-1 coefficient integrated over the mesh."""
    return float(np.sum(A.coeff(-1)) * A.spacing)


def _full_range(A: Symbol, B: Symbol) -> ExponentRange:
    (a_lo, a_hi), (b_lo, b_hi) = A.span(), B.span()
    return min(a_lo + b_lo, -1), max(a_hi + b_hi, -1)


def pairing(A: Symbol, B: Symbol) -> float:
    """<A, B> = Tr(A o B) with the product carried over every exponent >= -1."""
    lo, hi = _full_range(A, B)
    return trace(compose(A, B, (max(lo, -1), hi)))


def dual_exponent(k: int) -> int:
    """Exponent paired with xi^k by the trace (xi^k o xi^-k-1 lands on xi^-1)."""
    return -int(k) - 1


def functional_derivative(F: Callable[[Symbol], float], M: Symbol, h_fd: float = 1e-6) -> Symbol:
    """
    Functional derivative dF/dM with respect to the trace pairing.

    Central differences of F in every coefficient sample give the L^2
    gradients G_k (scaled by 1/dx). The derivative D = sum_k d_k xi^(-k-1) is
    the unique symbol with <D, dM> = dF(M).dM for every variation dM; pairing
    couples d_k to variations of higher exponents through difference terms,
    so the d_k are recovered from the lowest exponent upwards.

    Args:
        F: Scalar functional of a symbol
        M: Base point; its exponents define the variations
        h_fd: Finite-difference step

    Returns:
        Symbol on exponents -k-1 for each exponent k of M
    """
    if not h_fd > 0:
        raise UsageError(f"finite-difference step must be positive, got {h_fd}")
    grads: Dict[int, np.ndarray] = {}
    for k in M.exponents:
        g = np.empty(M.n)
        for j in range(M.n):
            plus = dict(M.coeffs)
            minus = dict(M.coeffs)
            bumped = M.coeffs[k].copy()
            bumped[j] += h_fd
            plus[k] = bumped
            bumped = M.coeffs[k].copy()
            bumped[j] -= h_fd
            minus[k] = bumped
            g[j] = (F(Symbol(plus, M.n, M.spacing)) - F(Symbol(minus, M.n, M.spacing))) / (2.0 * h_fd)
        grads[k] = g / M.spacing

    dual: Dict[int, np.ndarray] = {}
    for k in sorted(grads):
        d = grads[k].copy()
        for alpha in range(1, k - min(grads) + 1):
            lower = k - alpha
            if lower in dual and binomial(k, alpha) != 0.0:
                d -= binomial(k, alpha) * diff_values(dual[lower], M.spacing, alpha)
        dual[k] = d
    return Symbol({dual_exponent(k): v for k, v in dual.items()}, M.n, M.spacing)


# =============================================================================
# GROUP ACTION AND LIFTS
# =============================================================================

def is_group_element(g: Symbol, atol: float = 0.0) -> bool:
    """Unit xi^0 coefficient and only negative-exponent corrections."""
    if any(k > 0 and np.any(v != 0) for k, v in g.coeffs.items()):
        return False
    return bool(np.all(np.abs(g.coeff(0) - 1.0) <= atol))


def _require_group_element(g: Symbol) -> None:
    if not is_group_element(g):
        raise UsageError("group elements need coefficient 1 at xi^0 and only negative exponents besides")


def exp_first_order(U: Symbol) -> Symbol:
    """First-order exponential 1 + U of an integral symbol (negative exponents only)."""
    if any(k >= 0 and np.any(v != 0) for k, v in U.coeffs.items()):
        raise UsageError("the integral-symbol algebra only has negative exponents")
    return Symbol.identity(U.n, U.spacing) + U


def tangent_lift_left(g: Symbol, X: Symbol, trunc: ExponentRange = DEFAULT_RANGE) -> Symbol:
    """Left translation of a tangent vector: g o X."""
    _require_group_element(g)
    return compose(g, X, trunc)


def tangent_lift_right(g: Symbol, X: Symbol, trunc: ExponentRange = DEFAULT_RANGE) -> Symbol:
    """Right translation of a tangent vector: X o g."""
    _require_group_element(g)
    return compose(X, g, trunc)


def lift_left_star(g: Symbol, alpha: Symbol, trunc: ExponentRange = DEFAULT_RANGE) -> Symbol:
    """
    Cotangent lift of the left action, alpha o g.

    For g = 1 + u1 xi^-1 + u2 xi^-2 and alpha = a1 xi + a2 xi^2 the xi and
    xi^0 coefficients are a1 + u1 a2 and u1 a1 + u2 a2 + 2 a2 Dx(u1).
    """
    _require_group_element(g)
    return compose(alpha, g, trunc)


def lift_right_star(g: Symbol, alpha: Symbol, trunc: ExponentRange = DEFAULT_RANGE) -> Symbol:
    """
    Cotangent lift of the right action, g o alpha.

    For the same g and alpha the xi and xi^0 coefficients are a1 + u1 a2 and
    u1 a1 + u2 a2 - u1 Dx(a2).
    """
    _require_group_element(g)
    return compose(g, alpha, trunc)


def lie_poisson_bracket(F: Callable[[Symbol], float], H: Callable[[Symbol], float], M: Symbol,
                        h_fd: float = 1e-6, trunc: ExponentRange = DEFAULT_RANGE) -> float:
    """{F, H}(M) = <M, [dF/dM, dH/dM]>."""
    dF = functional_derivative(F, M, h_fd)
    dH = functional_derivative(H, M, h_fd)
    return pairing(M, commutator(dF, dH, trunc))


# =============================================================================
# PROPERTY SUITE
# =============================================================================

def associativity_defect(A: Symbol, B: Symbol, C: Symbol, exponents: Optional[Iterable[int]] = None,
                         trunc: ExponentRange = DEFAULT_RANGE) -> float:
    left = compose(compose(A, B, trunc), C, trunc)
    right = compose(A, compose(B, C, trunc), trunc)
    return (left - right).max_abs(exponents)


def jacobi_defect(A: Symbol, B: Symbol, C: Symbol, exponents: Optional[Iterable[int]] = None,
                  trunc: ExponentRange = DEFAULT_RANGE) -> float:
    total = (commutator(A, commutator(B, C, trunc), trunc)
             + commutator(B, commutator(C, A, trunc), trunc)
             + commutator(C, commutator(A, B, trunc), trunc))
    return total.max_abs(exponents)


def property_suite(rng: np.random.Generator, trials: int = 100, nx: int = 64) -> Dict[str, float]:
    """
    Run the algebra checks on seeded smooth random symbols and report max defects.

    Exact checks (rounding level):
        trace_commutator: Tr[A, B] for A on negative and B on non-negative exponents
        pairing_symmetry: <A, B> - <B, A> on the same pairs
        lift_adjointness: <alpha o g, X> - <alpha, g o X> with constant-coefficient g
        associativity_constant_middle: (P o Q) o R - P o (Q o R) with constant-coefficient Q
        left_lift_expansion / right_lift_expansion: xi and xi^0 coefficients of the lifts

    Reported only (O(dx^2) from the missing discrete Leibniz rule):
        associativity_full, jacobi_full
    """
    spacing = 2.0 * np.pi / nx
    worst = {k: 0.0 for k in ("trace_commutator", "pairing_symmetry", "lift_adjointness",
                              "associativity_constant_middle", "left_lift_expansion",
                              "right_lift_expansion", "associativity_full", "jacobi_full")}

    def bump(key: str, value: float) -> None:
        worst[key] = max(worst[key], float(value))

    for _ in range(int(trials)):
        A = Symbol.smooth_random(rng, nx, (-3, -2, -1))
        B = Symbol.smooth_random(rng, nx, (0, 1, 2))
        bump("trace_commutator", abs(trace(commutator(A, B))))
        bump("pairing_symmetry", abs(pairing(A, B) - pairing(B, A)))

        u1, u2 = rng.standard_normal(2)
        g = exp_first_order(Symbol({-1: np.full(nx, u1), -2: np.full(nx, u2)}, nx, spacing))
        alpha = Symbol.smooth_random(rng, nx, (1, 2))
        X = Symbol.smooth_random(rng, nx, range(-4, 3))
        bump("lift_adjointness", abs(pairing(lift_left_star(g, alpha), X) - pairing(alpha, compose(g, X))))

        P = Symbol.smooth_random(rng, nx, (-1, 0))
        R = Symbol.smooth_random(rng, nx, (-1, 0))
        q0, q1 = rng.standard_normal(2)
        Q = Symbol({-1: np.full(nx, q1), 0: np.full(nx, q0)}, nx, spacing)
        bump("associativity_constant_middle", associativity_defect(P, Q, R, exponents=range(-4, 1)))

        Qx = Symbol.smooth_random(rng, nx, (-1, 0))
        bump("associativity_full", associativity_defect(P, Qx, R, exponents=range(-4, 1)))
        bump("jacobi_full", jacobi_defect(P, Qx, R, exponents=range(-4, 1)))

        ug = Symbol.smooth_random(rng, nx, (-2, -1))
        gx = exp_first_order(ug)
        a1, a2 = alpha.coeff(1), alpha.coeff(2)
        v1, v2 = ug.coeff(-1), ug.coeff(-2)
        left = lift_left_star(gx, alpha)
        right = lift_right_star(gx, alpha)
        d_v1 = diff_values(v1, spacing, 1)
        d_a2 = diff_values(a2, spacing, 1)
        bump("left_lift_expansion", max(
            np.max(np.abs(left.coeff(1) - (a1 + v1 * a2))),
            np.max(np.abs(left.coeff(0) - (v1 * a1 + v2 * a2 + 2.0 * a2 * d_v1))),
        ))
        bump("right_lift_expansion", max(
            np.max(np.abs(right.coeff(1) - (a1 + v1 * a2))),
            np.max(np.abs(right.coeff(0) - (v1 * a1 + v2 * a2 - v1 * d_a2))),
        ))
    return worst


EXACT_CHECKS = ("trace_commutator", "pairing_symmetry", "lift_adjointness",
                "associativity_constant_middle", "left_lift_expansion", "right_lift_expansion")
