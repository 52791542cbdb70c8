"""
GeoFlow: Hamiltonian Core Module
================================
Phase-space containers, the Hamiltonian abstraction (value plus analytic
first derivatives) and the non-geometric reference integrators (explicit
Euler, classical RK4) that the structure-preserving schemes are compared to.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Tuple

import numpy as np

from utils.errors import UsageError, require_finite
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class PhasePoint:
    """Position and conjugate momentum of one sample."""
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=np.float64))
        p = np.atleast_1d(np.asarray(self.p, dtype=np.float64))
        if q.shape != p.shape or q.ndim != 1:
            raise UsageError(f"q and p must be equal-length vectors, got {q.shape} and {p.shape}")
        require_finite(q, "q")
        require_finite(p, "p")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class PhaseBatch:
    """
    A batch of N samples on the cotangent bundle, stored as (N, d) arrays.

    Arrays are copied and made read-only on construction, so a batch never
    changes after it is built.
    """
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, copy=True)
        p = np.array(self.p, dtype=np.float64, copy=True)
        if q.ndim == 1:
            q = q[:, None]
        if p.ndim == 1:
            p = p[:, None]
        if q.shape != p.shape or q.ndim != 2:
            raise UsageError(f"q and p must share shape (N, d), got {q.shape} and {p.shape}")
        if q.shape[0] < 1:
            raise UsageError("a phase batch needs at least one sample")
        require_finite(q, "q")
        require_finite(p, "p")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]

    @property
    def points(self) -> List[PhasePoint]:
        return [PhasePoint(qi, pi) for qi, pi in zip(self.q, self.p)]

    @classmethod
    def from_points(cls, points: List[PhasePoint]) -> "PhaseBatch":
        if not points:
            raise UsageError("a phase batch needs at least one sample")
        return cls(np.stack([pt.q for pt in points]), np.stack([pt.p for pt in points]))

    def replace(self, q=None, p=None) -> "PhaseBatch":
        return PhaseBatch(self.q if q is None else q, self.p if p is None else p)

    def flat(self) -> np.ndarray:
        """Concatenate (q, p) into one vector of length 2*N*d."""
        return np.concatenate([self.q.ravel(), self.p.ravel()])

    @classmethod
    def from_flat(cls, z: np.ndarray, n: int, d: int) -> "PhaseBatch":
        half = n * d
        return cls(z[:half].reshape(n, d), z[half:].reshape(n, d))


@dataclass(frozen=True)
class HamiltonianFn:
    """
    A Hamiltonian H: T*Q -> R with its first derivatives.

    The value is a scalar for the whole batch (samples may be coupled);
    grad_q and grad_p return arrays shaped like q and p.
    """
    name: str
    value: Callable[[PhaseBatch], float]
    grad_q: Callable[[PhaseBatch], np.ndarray]
    grad_p: Callable[[PhaseBatch], np.ndarray]
    params: Dict[str, Any] = field(default_factory=dict)

    def gradients(self, s: PhaseBatch) -> Tuple[np.ndarray, np.ndarray]:
        """Return (dH/dq, dH/dp), raising on non-finite entries."""
        gq = np.asarray(self.grad_q(s), dtype=np.float64).reshape(s.q.shape)
        gp = np.asarray(self.grad_p(s), dtype=np.float64).reshape(s.p.shape)
        require_finite(gq, f"{self.name}: dH/dq")
        require_finite(gp, f"{self.name}: dH/dp")
        return gq, gp

    def vector_field(self, s: PhaseBatch) -> Tuple[np.ndarray, np.ndarray]:
        """Canonical vector field (dH/dp, -dH/dq)."""
        gq, gp = self.gradients(s)
        return gp, -gq


# =============================================================================
# ARRAY-LEVEL STEPPERS
# =============================================================================

def explicit_euler(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """One explicit Euler step y + dt*f(y) for an arbitrary vector field."""
    return y + dt * f(y)


def runge_kutta4(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """One classical four-stage Runge-Kutta step for an arbitrary vector field."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _canonical_field(H: HamiltonianFn, n: int, d: int) -> Callable[[np.ndarray], np.ndarray]:
    def f(z: np.ndarray) -> np.ndarray:
        dq, dp = H.vector_field(PhaseBatch.from_flat(z, n, d))
        return np.concatenate([dq.ravel(), dp.ravel()])
    return f


def _check_dt(dt: float) -> float:
    dt = float(dt)
    if not np.isfinite(dt):
        raise UsageError(f"time step must be finite, got {dt}")
    return dt


# =============================================================================
# CANONICAL BASELINE INTEGRATORS
# =============================================================================

def euler_step(H: HamiltonianFn, s: PhaseBatch, dt: float) -> PhaseBatch:
    """
    Explicit Euler step of Hamilton's equations.

    Args:
        H: Hamiltonian with first derivatives
        s: Current phase batch
        dt: Time step

    Returns:
        (q + dt*dH/dp, p - dt*dH/dq)
    """
    dt = _check_dt(dt)
    gq, gp = H.gradients(s)
    return PhaseBatch(s.q + dt * gp, s.p - dt * gq)


def rk4_step(H: HamiltonianFn, s: PhaseBatch, dt: float) -> PhaseBatch:
    """
    Classical RK4 step applied to the canonical vector field.

    Args:
        H: Hamiltonian with first derivatives
        s: Current phase batch
        dt: Time step

    Returns:
        New phase batch
    """
    dt = _check_dt(dt)
    z = runge_kutta4(_canonical_field(H, s.n, s.d), s.flat(), dt)
    return PhaseBatch.from_flat(z, s.n, s.d)


def check_gradients(H: HamiltonianFn, s: PhaseBatch, h_fd: float = 1e-5) -> float:
    """
    Compare analytic gradients against central differences of the value.

    Args:
        H: Hamiltonian to check
        s: Phase batch at which to compare
        h_fd: Finite-difference step

    Returns:
        Max absolute deviation over all components of grad_q and grad_p
    """
    if not h_fd > 0:
        raise UsageError(f"finite-difference step must be positive, got {h_fd}")
    gq, gp = H.gradients(s)
    analytic = np.concatenate([gq.ravel(), gp.ravel()])
    z0 = s.flat()
    numeric = np.empty_like(z0)
    for k in range(z0.size):
        zp = z0.copy()
        zm = z0.copy()
        zp[k] += h_fd
        zm[k] -= h_fd
        hp = H.value(PhaseBatch.from_flat(zp, s.n, s.d))
        hm = H.value(PhaseBatch.from_flat(zm, s.n, s.d))
        numeric[k] = (hp - hm) / (2.0 * h_fd)
    return float(np.max(np.abs(analytic - numeric)))


def integrate(stepper: Callable, H, s: PhaseBatch, dt: float, steps: int) -> List[PhaseBatch]:
    """
    Apply a stepper repeatedly and keep every state.

    Args:
        stepper: Callable (H, s, dt) -> PhaseBatch
        H: Hamiltonian (or series) passed through to the stepper
        s: Initial state
        dt: Time step
        steps: Number of steps

    Returns:
        List of steps+1 states, starting with s
    """
    states = [s]
    for _ in range(int(steps)):
        s = stepper(H, s, dt)
        states.append(s)
    return states


# =============================================================================
# REFERENCE SYSTEMS
# =============================================================================

def harmonic_oscillator(omega: float = 1.0) -> HamiltonianFn:
    """H = sum_i (|p_i|^2 + omega^2 |q_i|^2) / 2."""
    w2 = float(omega) ** 2

    def value(s: PhaseBatch) -> float:
        return 0.5 * float(np.sum(s.p ** 2) + w2 * np.sum(s.q ** 2))

    return HamiltonianFn(
        name="harmonic_oscillator",
        value=value,
        grad_q=lambda s: w2 * s.q,
        grad_p=lambda s: s.p.copy(),
        params={"omega": float(omega)},
    )


def harmonic_flow(s: PhaseBatch, t: float, omega: float = 1.0) -> PhaseBatch:
    """Exact time-t flow of the harmonic oscillator."""
    c, sn = np.cos(omega * t), np.sin(omega * t)
    return PhaseBatch(c * s.q + (sn / omega) * s.p, -omega * sn * s.q + c * s.p)


def constant_hamiltonian(c: float = 1.0) -> HamiltonianFn:
    """H = c everywhere; its gradients vanish identically."""
    return HamiltonianFn(
        name="constant",
        value=lambda s: float(c),
        grad_q=lambda s: np.zeros_like(s.q),
        grad_p=lambda s: np.zeros_like(s.p),
        params={"c": float(c)},
    )


def random_batch(rng: np.random.Generator, n: int, d: int, scale: float = 1.0) -> PhaseBatch:
    """Gaussian random phase batch drawn from the given generator."""
    return PhaseBatch(scale * rng.standard_normal((n, d)), scale * rng.standard_normal((n, d)))
