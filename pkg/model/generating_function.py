"""
GeoFlow: Generating-Function Symplectic Integrator
==================================================
Type-II generating-function integrator. A truncated power series

    S(q, p, t) = sum_{i=1..m} t^i S_i(q, p)

solving the Hamilton-Jacobi equation dS/dt = H(q + dS/dp, p) generates the
implicit one-step map

    q' = q + dS/dp(q, p', dt),    p' = p - dS/dq(q, p', dt).

Terms:
    S_1 = H
    S_2 = 1/2 <H_q, H_p>
    S_3 = 1/6 (<H_p, H_qq H_p> + <H_q, H_pp H_q> + <H_q, H_pq H_p>)

Second derivatives of H are Hessian-vector products formed by central
differences of the supplied gradients.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from model.hamiltonian import HamiltonianFn, PhaseBatch
from utils.errors import ConvergenceError, UnsupportedOrderError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

HESSIAN_STEP = 1e-5
TERM3_STEP = 1e-3
MAX_ORDER = 3

Gradient = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class SeriesTerm:
    """One coefficient S_i of the series, with its (q, p) gradient."""
    index: int
    value: Callable[[PhaseBatch], float]
    grad: Callable[[PhaseBatch], Gradient]


@dataclass(frozen=True)
class GeneratingSeries:
    """Truncated type-II generating function built from a Hamiltonian."""
    order: int
    terms: List[SeriesTerm]
    source: HamiltonianFn

    def value(self, s: PhaseBatch, t: float) -> float:
        return float(sum(t ** term.index * term.value(s) for term in self.terms))

    def time_derivative(self, s: PhaseBatch, t: float) -> float:
        return float(sum(term.index * t ** (term.index - 1) * term.value(s) for term in self.terms))

    def grad(self, s: PhaseBatch, t: float) -> Gradient:
        gq = np.zeros_like(s.q)
        gp = np.zeros_like(s.p)
        for term in self.terms:
            tq, tp = term.grad(s)
            w = t ** term.index
            gq += w * tq
            gp += w * tp
        return gq, gp


def _shifted(s: PhaseBatch, h: float, dq, dp) -> PhaseBatch:
    return PhaseBatch(s.q + h * dq, s.p + h * dp)


def hessian_vector(H: HamiltonianFn, s: PhaseBatch, dq, dp, h: float = HESSIAN_STEP) -> Gradient:
    """Directional derivative of (H_q, H_p) along (dq, dp) by central differences."""
    gq_p, gp_p = H.gradients(_shifted(s, h, dq, dp))
    gq_m, gp_m = H.gradients(_shifted(s, -h, dq, dp))
    return (gq_p - gq_m) / (2.0 * h), (gp_p - gp_m) / (2.0 * h)


def _term1(H: HamiltonianFn) -> SeriesTerm:
    return SeriesTerm(index=1, value=H.value, grad=H.gradients)


def _term2(H: HamiltonianFn) -> SeriesTerm:
    def value(s: PhaseBatch) -> float:
        gq, gp = H.gradients(s)
        return 0.5 * float(np.sum(gq * gp))

    def grad(s: PhaseBatch) -> Gradient:
        # d/dz <H_q, H_p> / 2 is half the Hessian applied to (H_p, H_q)
        gq, gp = H.gradients(s)
        hq, hp = hessian_vector(H, s, gp, gq)
        return 0.5 * hq, 0.5 * hp

    return SeriesTerm(index=2, value=value, grad=grad)


def _term3(H: HamiltonianFn) -> SeriesTerm:
    def value(s: PhaseBatch) -> float:
        gq, gp = H.gradients(s)
        zeros = np.zeros_like(gq)
        hqq_hp, hpq_hp = hessian_vector(H, s, gp, zeros)
        _, hpp_hq = hessian_vector(H, s, zeros, gq)
        return float(np.sum(gp * hqq_hp) + np.sum(gq * hpp_hq) + np.sum(gq * hpq_hp)) / 6.0

    def grad(s: PhaseBatch) -> Gradient:
        z0 = s.flat()
        out = np.empty_like(z0)
        for k in range(z0.size):
            zp = z0.copy()
            zm = z0.copy()
            zp[k] += TERM3_STEP
            zm[k] -= TERM3_STEP
            out[k] = (value(PhaseBatch.from_flat(zp, s.n, s.d))
                      - value(PhaseBatch.from_flat(zm, s.n, s.d))) / (2.0 * TERM3_STEP)
        half = s.n * s.d
        return out[:half].reshape(s.q.shape), out[half:].reshape(s.p.shape)

    return SeriesTerm(index=3, value=value, grad=grad)


def build_series(H: HamiltonianFn, m: int) -> GeneratingSeries:
    """
    Build the m-term type-II generating series of a Hamiltonian.

    Args:
        H: Autonomous Hamiltonian with analytic first derivatives
        m: Number of terms, 1 <= m <= 3

    Returns:
        GeneratingSeries whose dt=0 map is the identity
    """
    if not isinstance(m, (int, np.integer)) or not 1 <= m <= MAX_ORDER:
        raise UnsupportedOrderError(f"series order must be in 1..{MAX_ORDER}, got {m}")
    builders = [_term1, _term2, _term3]
    terms = [builders[i](H) for i in range(int(m))]
    return GeneratingSeries(order=int(m), terms=terms, source=H)


def symplectic_step(S: GeneratingSeries, s: PhaseBatch, dt: float,
                    tol: float = 1e-12, max_iter: int = 100) -> PhaseBatch:
    """
    One implicit generating-function step.

    The new momentum is found by damped fixed-point iteration on
    p' = p - dS/dq(q, p', dt); the damping starts at 1 and is halved
    whenever the residual grows.

    Args:
        S: Generating series
        s: Current state (q^k, p^k)
        dt: Time step, dt >= 0
        tol: Residual tolerance (max norm)
        max_iter: Iteration cap

    Returns:
        (q^{k+1}, p^{k+1})

    Raises:
        ConvergenceError: the residual stayed above tol after max_iter iterations
    """
    dt = float(dt)
    if not np.isfinite(dt) or dt < 0:
        raise UsageError(f"time step must be finite and non-negative, got {dt}")
    if not tol > 0:
        raise UsageError(f"tolerance must be positive, got {tol}")
    if dt == 0.0:
        return s

    q0, p0 = s.q, s.p

    def update(p_new: np.ndarray) -> np.ndarray:
        gq, _ = S.grad(PhaseBatch(q0, p_new), dt)
        return p0 - gq

    p = np.array(p0)
    damping = 1.0
    residual = np.inf
    for it in range(1, int(max_iter) + 1):
        target = update(p)
        new_residual = float(np.max(np.abs(target - p)))
        if new_residual <= tol:
            p = target
            residual = new_residual
            break
        if new_residual > residual:
            damping *= 0.5
        residual = new_residual
        p = p + damping * (target - p)
    else:
        raise ConvergenceError("generating-function fixed point did not converge",
                               residual, max_iter, module="generating_function")

    _, gp = S.grad(PhaseBatch(q0, p), dt)
    return PhaseBatch(q0 + gp, p)


@dataclass(frozen=True)
class GeneratingFunctionIntegrator:
    """Step callable (s, dt) -> s' bundling a series with solver settings."""
    series: GeneratingSeries
    tol: float = 1e-12
    max_iter: int = 100

    def __call__(self, s: PhaseBatch, dt: float) -> PhaseBatch:
        return symplectic_step(self.series, s, dt, self.tol, self.max_iter)

    @classmethod
    def from_hamiltonian(cls, H: HamiltonianFn, m: int, tol: float = 1e-12,
                         max_iter: int = 100) -> "GeneratingFunctionIntegrator":
        return cls(build_series(H, m), tol, max_iter)


def canonical_form(dim: int) -> np.ndarray:
    """Canonical skew matrix [[0, I], [-I, 0]] for (q, p) ordering."""
    eye = np.eye(dim)
    zero = np.zeros((dim, dim))
    return np.block([[zero, eye], [-eye, zero]])


def step_jacobian(step: Callable[[PhaseBatch, float], PhaseBatch], s: PhaseBatch,
                  dt: float, h_fd: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a one-step map in flat (q, p) coordinates."""
    z0 = s.flat()
    jac = np.empty((z0.size, z0.size))
    for k in range(z0.size):
        zp = z0.copy()
        zm = z0.copy()
        zp[k] += h_fd
        zm[k] -= h_fd
        fp = step(PhaseBatch.from_flat(zp, s.n, s.d), dt).flat()
        fm = step(PhaseBatch.from_flat(zm, s.n, s.d), dt).flat()
        jac[:, k] = (fp - fm) / (2.0 * h_fd)
    return jac


def symplecticity_defect(step: Callable[[PhaseBatch, float], PhaseBatch], s: PhaseBatch,
                         dt: float, h_fd: float = 1e-5) -> float:
    """
    Measure how far a one-step map is from preserving dq^dp.

    Args:
        step: Callable (s, dt) -> PhaseBatch
        s: Base point
        dt: Time step
        h_fd: Finite-difference step for the Jacobian

    Returns:
        max |J^T Omega J - Omega|
    """
    jac = step_jacobian(step, s, dt, h_fd)
    omega = canonical_form(s.n * s.d)
    return float(np.max(np.abs(jac.T @ omega @ jac - omega)))


def hamilton_jacobi_residual(S: GeneratingSeries, s: PhaseBatch, t: float) -> float:
    """Residual dS/dt - H(q + dS/dp, p) of the truncated series at (s, t)."""
    _, gp = S.grad(s, t)
    shifted = PhaseBatch(s.q + gp, s.p)
    return S.time_derivative(s, t) - S.source.value(shifted)
