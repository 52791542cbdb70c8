"""
GeoFlow: Lie-Poisson Hamilton-Jacobi Steppers
=============================================
1. Free rigid body on so(3)*: coadjoint transport Pi' = R^T Pi by the group
   element R = exp(dt * hat(Omega)), which keeps Pi on its sphere exactly.
2. Semidirect-product hydrodynamics on a periodic 1D mesh: momentum density
   m and probability density rho, with the deep-learning Hamiltonian

       H = 1/2 int m^2/rho + nu^2/2 int m Dx(log rho) + nu^4/8 int rho (Dx log rho)^2.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from model.hamiltonian import explicit_euler, runge_kutta4
from model.symbols import (
    GridFunction,
    Symbol,
    check_mesh,
    diff_values,
    dual_exponent,
    functional_derivative,
)
from utils.errors import ConvergenceError, NumericalDomainError, PositivityError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

LOG_FLOOR = 1e-12
RIGIDBODY_INTEGRATORS = ("euler", "rk4", "lphj")
SEMIDIRECT_VARIANTS = ("literal", "conservative")


# =============================================================================
# RIGID BODY
# =============================================================================

@dataclass(frozen=True)
class RigidBodyState:
    """Body angular momentum Pi with the principal moments of inertia."""
    pi: np.ndarray
    inertia: np.ndarray = field(default_factory=lambda: np.array([1.0, 2.0, 3.0]))

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64, copy=True).ravel()
        inertia = np.array(self.inertia, dtype=np.float64, copy=True).ravel()
        if pi.shape != (3,) or inertia.shape != (3,):
            raise UsageError("rigid body needs a 3-vector Pi and three principal moments")
        if np.any(inertia <= 0):
            raise UsageError(f"inertia entries must be positive, got {inertia}")
        if not np.all(np.isfinite(pi)):
            raise NumericalDomainError("non-finite value in Pi")
        pi.setflags(write=False)
        inertia.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "inertia", inertia)

    @property
    def omega(self) -> np.ndarray:
        return self.pi / self.inertia

    def replace(self, pi) -> "RigidBodyState":
        return RigidBodyState(pi, self.inertia)


def rigidbody_energy(s: RigidBodyState) -> float:
    """H = 1/2 <Pi, I^-1 Pi>."""
    return 0.5 * float(np.dot(s.pi, s.omega))


def rigidbody_casimir(s: RigidBodyState) -> float:
    """|Pi|^2, constant on coadjoint orbits."""
    return float(np.dot(s.pi, s.pi))


def rigidbody_vector_field(inertia: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Euler's equations dPi/dt = Pi x Omega with Omega = I^-1 Pi."""
    inertia = np.asarray(inertia, dtype=np.float64)

    def f(pi: np.ndarray) -> np.ndarray:
        return np.cross(pi, pi / inertia)

    return f


def _transport(pi: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    return Rotation.from_rotvec(dt * omega).apply(pi, inverse=True)


def rigidbody_lphj_step(s: RigidBodyState, dt: float, tol: float = 1e-14, max_iter: int = 100,
                        implicit: bool = True) -> RigidBodyState:
    """
    Coadjoint-transport step of the free rigid body.

    The explicit variant rotates with Omega(Pi_k) (first order); the implicit
    variant solves Omega* = I^-1 (Pi + Pi')/2 by fixed-point iteration (second
    order). Either way Pi' = exp(dt hat(Omega*))^T Pi has the norm of Pi.

    Args:
        s: Current state
        dt: Time step
        tol: Fixed-point tolerance (max norm, relative to |Pi|)
        max_iter: Iteration cap
        implicit: Midpoint (True) or explicit (False) angular velocity

    Returns:
        New RigidBodyState
    """
    dt = float(dt)
    if not np.isfinite(dt):
        raise UsageError(f"time step must be finite, got {dt}")
    pi = s.pi
    new = _transport(pi, s.omega, dt)
    if not implicit:
        return s.replace(new)

    scale = max(1.0, float(np.max(np.abs(pi))))
    residual = np.inf
    for _ in range(int(max_iter)):
        candidate = _transport(pi, 0.5 * (pi + new) / s.inertia, dt)
        residual = float(np.max(np.abs(candidate - new)))
        new = candidate
        if residual <= tol * scale:
            return s.replace(new)
    raise ConvergenceError("rigid-body midpoint fixed point did not converge",
                           residual, max_iter, module="lie_poisson")


def rigidbody_euler_step(s: RigidBodyState, dt: float) -> RigidBodyState:
    return s.replace(explicit_euler(rigidbody_vector_field(s.inertia), s.pi, dt))


def rigidbody_rk4_step(s: RigidBodyState, dt: float) -> RigidBodyState:
    return s.replace(runge_kutta4(rigidbody_vector_field(s.inertia), s.pi, dt))


def run_rigidbody(integrator: str, pi0, inertia, dt: float, steps: int, every: int = 1,
                  implicit: bool = True, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """
    Integrate the rigid body and keep every `every`-th state.

    Args:
        integrator: 'euler', 'rk4' or 'lphj'
        pi0: Initial angular momentum
        inertia: Principal moments
        dt: Time step
        steps: Number of steps
        every: Output stride

    Returns:
        (rows, 4) array of (step, Pi_1, Pi_2, Pi_3)
    """
    if integrator not in RIGIDBODY_INTEGRATORS:
        raise UsageError(f"unknown rigid-body integrator '{integrator}', "
                         f"expected one of {list(RIGIDBODY_INTEGRATORS)}")
    s = RigidBodyState(pi0, inertia)
    rows = [np.concatenate([[0.0], s.pi])]
    for k in range(1, int(steps) + 1):
        try:
            if integrator == "lphj":
                s = rigidbody_lphj_step(s, dt, tol, max_iter, implicit)
            elif integrator == "rk4":
                s = rigidbody_rk4_step(s, dt)
            else:
                s = rigidbody_euler_step(s, dt)
        except ConvergenceError as exc:
            raise exc.at(k, "lie_poisson.run_rigidbody") from None
        if k % every == 0:
            rows.append(np.concatenate([[float(k)], s.pi]))
    return np.array(rows)


# =============================================================================
# SEMIDIRECT-PRODUCT HYDRODYNAMICS
# =============================================================================

@dataclass(frozen=True)
class SemidirectState:
    """Momentum density m and probability density rho on one periodic mesh."""
    m: GridFunction
    rho: GridFunction
    nu: float = 0.0

    def __post_init__(self):
        check_mesh(self.m.mesh, self.rho.mesh)
        if np.any(self.rho.values <= 0):
            bad = int(np.flatnonzero(self.rho.values <= 0)[0])
            raise PositivityError("density must be positive", bad)

    @property
    def dx(self) -> float:
        return self.rho.dx

    @property
    def n(self) -> int:
        return self.rho.n

    @classmethod
    def initial(cls, m, rho, spacing: float, nu: float = 0.0) -> "SemidirectState":
        """State with rho rescaled to unit mass."""
        rho = np.asarray(rho, dtype=np.float64)
        mass = float(np.sum(rho) * spacing)
        if not mass > 0:
            raise NumericalDomainError("initial density has no mass")
        return cls(GridFunction(m, spacing), GridFunction(rho / mass, spacing), float(nu))

    def replace(self, m=None, rho=None) -> "SemidirectState":
        return SemidirectState(self.m if m is None else self.m.like(m),
                               self.rho if rho is None else self.rho.like(rho), self.nu)


@dataclass(frozen=True)
class LPHamiltonian:
    """Hamiltonian on the semidirect dual with its functional derivatives."""
    name: str
    value: Callable[[SemidirectState], float]
    dH_dm: Callable[[SemidirectState], np.ndarray]
    dH_drho: Callable[[SemidirectState], np.ndarray]
    params: Dict[str, Any] = field(default_factory=dict)


def semidirect_mass(s: SemidirectState) -> float:
    return s.rho.integral()


def semidirect_momentum(s: SemidirectState) -> float:
    return s.m.integral()


def diamond(eta: GridFunction, rho: GridFunction) -> GridFunction:
    """eta <> rho = rho Dx(eta)."""
    check_mesh(eta.mesh, rho.mesh)
    return rho.like(rho.values * diff_values(eta.values, eta.dx, 1))


def _momentum_rate(m: np.ndarray, rho: np.ndarray, u: np.ndarray, w: np.ndarray, h: float) -> np.ndarray:
    return (m * diff_values(u, h, 1) + diff_values(m * u, h, 1) + rho * diff_values(w, h, 1))


def semidirect_rates(s: SemidirectState, H: LPHamiltonian):
    """(d rho/dt, dm/dt) of the semi-discrete Lie-Poisson system."""
    u = np.asarray(H.dH_dm(s), dtype=np.float64)
    w = np.asarray(H.dH_drho(s), dtype=np.float64)
    m, rho, h = s.m.values, s.rho.values, s.dx
    return -diff_values(rho * u, h, 1), _momentum_rate(m, rho, u, w, h)


def momentum_budget(s: SemidirectState, H: LPHamiltonian, dt: float) -> float:
    """Change of int m dx over one conservative step, predicted term by term."""
    u = np.asarray(H.dH_dm(s), dtype=np.float64)
    w = np.asarray(H.dH_drho(s), dtype=np.float64)
    h = s.dx
    rate = s.m.values * diff_values(u, h, 1) + s.rho.values * diff_values(w, h, 1)
    return float(dt * np.sum(rate) * h)


def literal_momentum_symbol(s: SemidirectState, u: np.ndarray, dt: float) -> Symbol:
    """
    Momentum symbol after the left-translation half of a literal step:

        mu = xi + u xi^-1 + dt u xi + dt u^2 xi^-1 - 2 dt u Dx(u) xi^-2 + 3 dt u Dx^2(u) xi^-3

    with dH/dA = u. The test-function term rho Dx f carries no momentum and is omitted.
    """
    h = s.dx
    one = np.ones(s.n)
    return Symbol({
        1: one + dt * u,
        -1: u + dt * u * u,
        -2: -2.0 * dt * u * diff_values(u, h, 1),
        -3: 3.0 * dt * u * diff_values(u, h, 2),
    }, s.n, h)


def lp_semidirect_step(s: SemidirectState, H: LPHamiltonian, dt: float,
                       variant: str = "conservative") -> SemidirectState:
    """
    One step of the semidirect Lie-Poisson system.

    conservative:
        rho' = rho - dt Dx(rho u)
        m'   = m + dt (m Dx u + Dx(m u) + rho Dx w)
    literal (momentum-map lines as printed, mass is not conserved):
        rho' = rho - dt Dx(rho u) + dt w
        m'   = m + [xi^-2 coefficient of literal_momentum_symbol]
             = m - 2 dt u Dx u
    with u = dH/dm and w = dH/drho.

    Raises:
        PositivityError: rho' has a nonpositive entry (index of the first one)
    """
    if variant not in SEMIDIRECT_VARIANTS:
        raise UsageError(f"unknown variant '{variant}', expected one of {list(SEMIDIRECT_VARIANTS)}")
    if not dt > 0:
        raise UsageError(f"time step must be positive, got {dt}")
    u = np.asarray(H.dH_dm(s), dtype=np.float64)
    w = np.asarray(H.dH_drho(s), dtype=np.float64)
    m, rho, h = s.m.values, s.rho.values, s.dx

    rho_new = rho - dt * diff_values(rho * u, h, 1)
    if variant == "literal":
        rho_new = rho_new + dt * w
        m_new = m + literal_momentum_symbol(s, u, dt).coeff(dual_exponent(1))
    else:
        m_new = m + dt * _momentum_rate(m, rho, u, w, h)

    if not (np.all(np.isfinite(rho_new)) and np.all(np.isfinite(m_new))):
        raise NumericalDomainError("non-finite value in semidirect step")
    if np.any(rho_new <= LOG_FLOOR):
        raise PositivityError("density lost positivity", int(np.flatnonzero(rho_new <= LOG_FLOOR)[0]))
    return s.replace(m=m_new, rho=rho_new)


def run_semidirect(s: SemidirectState, H: LPHamiltonian, dt: float, steps: int,
                   variant: str = "conservative", every: int = 1) -> List[SemidirectState]:
    """States after every `every`-th step, starting with s."""
    states = [s]
    for k in range(1, int(steps) + 1):
        try:
            s = lp_semidirect_step(s, H, dt, variant)
        except PositivityError:
            logger.warning(f"[!] positivity lost at step {k}")
            raise
        if k % every == 0:
            states.append(s)
    return states


def density_pullback(rho: GridFunction, u: GridFunction, dt: float, mode: str = "fokker_planck",
                     alpha: float = 200.0, sign: str = "conservative") -> GridFunction:
    """
    Transport a density by a velocity field over one step.

    Args:
        rho: Density, >= 0
        u: Velocity
        dt: Time step
        mode: 'fokker_planck' (one continuity step) or 'sph' (Gaussian
            kernel reconstruction at displaced particles)
        alpha: Inverse squared width of the Gaussian kernel
        sign: 'conservative' (rho - dt Dx(rho u)) or 'printed' (rho + dt Dx(rho u))
            for fokker_planck mode
    """
    check_mesh(rho.mesh, u.mesh)
    if np.any(rho.values < 0):
        raise NumericalDomainError("density must be non-negative")
    if mode == "fokker_planck":
        if sign not in ("conservative", "printed"):
            raise UsageError(f"unknown sign convention '{sign}'")
        flux = diff_values(rho.values * u.values, rho.dx, 1)
        factor = -1.0 if sign == "conservative" else 1.0
        return rho.like(rho.values + factor * dt * flux)
    if mode == "sph":
        if not alpha > 0:
            raise UsageError(f"kernel parameter must be positive, got {alpha}")
        x = rho.nodes()
        length = rho.n * rho.dx
        r = x[:, None] + dt * u.values[None, :] - x[None, :]
        r = (r + 0.5 * length) % length - 0.5 * length
        weights = np.sqrt(alpha / np.pi) * np.exp(-alpha * r * r)
        return rho.like(weights @ rho.values * rho.dx)
    raise UsageError(f"unknown pullback mode '{mode}'")


def _log_density(rho: np.ndarray) -> np.ndarray:
    if np.any(rho <= 0):
        bad = int(np.flatnonzero(rho <= 0)[0])
        raise NumericalDomainError(f"nonpositive density at grid index {bad}")
    return np.log(np.maximum(rho, LOG_FLOOR))


def deep_lp_hamiltonian(nu: float) -> LPHamiltonian:
    """
    Hamiltonian of deep learning as a semidirect Lie-Poisson system.

    The derivatives are the exact gradients of the discrete quadrature
    (divided by dx):
        dH/dm   = m/rho + nu^2/2 Dx(l)
        dH/drho = -m^2/(2 rho^2) + nu^4/8 Dx(l)^2 - Dx(nu^2/2 m + nu^4/4 rho Dx(l)) / rho
    with l = log rho.
    """
    if nu < 0:
        raise UsageError(f"noise level must be non-negative, got {nu}")
    nu2 = float(nu) ** 2
    nu4 = nu2 * nu2

    def value(s: SemidirectState) -> float:
        m, rho, h = s.m.values, s.rho.values, s.dx
        dl = diff_values(_log_density(rho), h, 1)
        density = 0.5 * m * m / rho + 0.5 * nu2 * m * dl + 0.125 * nu4 * rho * dl * dl
        return float(np.sum(density) * h)

    def dH_dm(s: SemidirectState) -> np.ndarray:
        m, rho, h = s.m.values, s.rho.values, s.dx
        return m / rho + 0.5 * nu2 * diff_values(_log_density(rho), h, 1)

    def dH_drho(s: SemidirectState) -> np.ndarray:
        m, rho, h = s.m.values, s.rho.values, s.dx
        dl = diff_values(_log_density(rho), h, 1)
        flux = 0.5 * nu2 * m + 0.25 * nu4 * rho * dl
        return -0.5 * m * m / (rho * rho) + 0.125 * nu4 * dl * dl - diff_values(flux, h, 1) / rho

    return LPHamiltonian("deep_learning", value, dH_dm, dH_drho, {"nu": float(nu)})


def zero_lp_hamiltonian() -> LPHamiltonian:
    """H = 0; every state is a fixed point."""
    return LPHamiltonian("zero", lambda s: 0.0, lambda s: np.zeros(s.n), lambda s: np.zeros(s.n))


def lp_derivative_oracle(H: LPHamiltonian, s: SemidirectState, h_fd: float = 1e-6):
    """
    Finite-difference functional derivatives of H.

    Each density is wrapped as a one-exponent symbol so the symbol-algebra
    functional derivative supplies the central differences.

    Returns:
        (dH/dm, dH/drho) as arrays
    """
    spacing = s.dx

    def in_m(M: Symbol) -> float:
        return H.value(s.replace(m=M.coeff(0)))

    def in_rho(P: Symbol) -> float:
        return H.value(s.replace(rho=P.coeff(0)))

    dm = functional_derivative(in_m, Symbol({0: s.m.values}, s.n, spacing), h_fd)
    drho = functional_derivative(in_rho, Symbol({0: s.rho.values}, s.n, spacing), h_fd)
    return dm.coeff(-1), drho.coeff(-1)


def smooth_semidirect_state(nx: int, nu: float, amplitude: float = 0.1) -> SemidirectState:
    """Unit-mass Gaussian bump on [0, 2 pi) with a small sinusoidal momentum."""
    if nx < 4:
        raise UsageError(f"mesh needs at least 4 points, got {nx}")
    spacing = 2.0 * np.pi / nx
    x = spacing * np.arange(nx)
    rho = 0.2 + np.exp(-2.0 * (x - np.pi) ** 2)
    m = amplitude * np.sin(x)
    return SemidirectState.initial(m, rho, spacing, nu)
