"""
GeoFlow: ResNet Optimal-Control Module
======================================
Continuous ResNets trained as an optimal-control problem. The control
Hamiltonian

    H(q, p, theta) = sum_i <p_i, tanh(u q_i + b)> - gamma/2 (|u|_F^2 + |b|^2)

is made stationary in theta, which eliminates the control and leaves a
Hamiltonian on the cotangent bundle. The symplectic network integrates that
reduced system with the first-order generating-function scheme; the Euler and
RK4 networks integrate q' = tanh(u_k q + b_k) with free per-layer weights.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit
from sklearn.metrics import accuracy_score

from model.hamiltonian import HamiltonianFn, PhaseBatch
from utils.errors import ConvergenceError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

REDUCED_FD_STEP = 1e-5


class IntegratorKind(Enum):
    """Layer integrators available to the network."""
    EULER = "euler"
    RK4 = "rk4"
    SYMPLECTIC = "symplectic"

    @classmethod
    def parse(cls, value) -> "IntegratorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise UsageError(f"unknown integrator '{value}', expected one of "
                             f"{[k.value for k in cls]}") from None


@dataclass(frozen=True)
class ControlParams:
    """Network weights u (d x d) and bias b (d)."""
    u: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if u.ndim != 2 or u.shape[0] != u.shape[1] or b.shape != (u.shape[0],):
            raise UsageError(f"control needs u (d, d) and b (d,), got {u.shape} and {b.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(b))):
            raise UsageError("control parameters must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return self.b.shape[0]

    def norm_sq(self) -> float:
        return float(np.sum(self.u ** 2) + np.sum(self.b ** 2))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.b])

    @classmethod
    def from_flat(cls, x: np.ndarray, d: int) -> "ControlParams":
        return cls(x[:d * d].reshape(d, d), x[d * d:])

    @classmethod
    def zeros(cls, d: int) -> "ControlParams":
        return cls(np.zeros((d, d)), np.zeros(d))


@dataclass
class LayerTrajectory:
    """States q^0..q^{N_t} (and costates/controls when the integrator has them)."""
    q: np.ndarray                       # (N_t + 1, N, d)
    p: Optional[np.ndarray] = None      # (N_t + 1, N, d), symplectic only
    controls: Optional[List[ControlParams]] = None

    @property
    def final(self) -> np.ndarray:
        return self.q[-1]

    def __len__(self) -> int:
        return self.q.shape[0]


# =============================================================================
# ACTIVATION AND READOUT
# =============================================================================

def activation(z: np.ndarray) -> np.ndarray:
    return np.tanh(z)


def activation_prime(z: np.ndarray) -> np.ndarray:
    t = np.tanh(z)
    return 1.0 - t * t


def readout(q_final: np.ndarray) -> np.ndarray:
    """Logistic readout of the first state coordinate."""
    q_final = np.asarray(q_final, dtype=np.float64)
    x = q_final[:, 0] if q_final.ndim == 2 else q_final
    return expit(x)


# =============================================================================
# CONTROL HAMILTONIAN
# =============================================================================

def _preactivation(q: np.ndarray, theta: ControlParams) -> np.ndarray:
    return q @ theta.u.T + theta.b


def control_hamiltonian(batch: PhaseBatch, theta: ControlParams, gamma: float) -> float:
    """
    Control Hamiltonian summed over the batch.

    Args:
        batch: States q_i and costates p_i
        theta: Weights and bias
        gamma: Regularisation weight

    Returns:
        sum_i <p_i, tanh(u q_i + b)> - gamma/2 |theta|^2
    """
    if theta.d != batch.d:
        raise UsageError(f"control dimension {theta.d} does not match state dimension {batch.d}")
    z = _preactivation(batch.q, theta)
    return float(np.sum(batch.p * activation(z)) - 0.5 * gamma * theta.norm_sq())


def control_gradient(batch: PhaseBatch, theta: ControlParams, gamma: float) -> ControlParams:
    """dH/dtheta of the control Hamiltonian."""
    r = batch.p * activation_prime(_preactivation(batch.q, theta))
    return ControlParams(r.T @ batch.q - gamma * theta.u, r.sum(axis=0) - gamma * theta.b)


def _control_map(batch: PhaseBatch, theta: ControlParams, gamma: float) -> ControlParams:
    r = batch.p * activation_prime(_preactivation(batch.q, theta))
    return ControlParams((r.T @ batch.q) / gamma, r.sum(axis=0) / gamma)


def _damped_fixed_point(update, x0: np.ndarray, tol: float, max_iter: int, what: str):
    x = np.array(x0, dtype=np.float64)
    damping = 1.0
    residual = np.inf
    for it in range(1, int(max_iter) + 1):
        target = update(x)
        new_residual = float(np.max(np.abs(target - x))) if x.size else 0.0
        if new_residual <= tol:
            return target, new_residual, it
        if new_residual > residual:
            damping *= 0.5
        residual = new_residual
        x = x + damping * (target - x)
    raise ConvergenceError(f"{what} did not converge", residual, max_iter, module="resnet_ocp")


def eliminate_control(batch: PhaseBatch, gamma: float, tol: float = 1e-12,
                      max_iter: int = 500,
                      theta0: Optional[ControlParams] = None) -> ControlParams:
    """
    Solve dH/dtheta = 0 for the control.

    The stationarity condition is the fixed point
        u = (1/gamma) sum_i (p_i * tanh'(z_i)) q_i^T,
        b = (1/gamma) sum_i  p_i * tanh'(z_i),    z_i = u q_i + b.

    Args:
        batch: States and costates
        gamma: Regularisation weight, > 0
        tol: Fixed-point tolerance (max norm on theta)
        max_iter: Iteration cap
        theta0: Starting guess (zeros by default)

    Returns:
        Stationary ControlParams
    """
    if not gamma > 0:
        raise UsageError(f"gamma must be positive, got {gamma}")
    d = batch.d
    x0 = (theta0 or ControlParams.zeros(d)).flat()

    def update(x):
        return _control_map(batch, ControlParams.from_flat(x, d), gamma).flat()

    x, _, _ = _damped_fixed_point(update, x0, tol, max_iter, "control elimination")
    return ControlParams.from_flat(x, d)


def reduced_hamiltonian(batch: PhaseBatch, gamma: float, tol: float = 1e-12,
                        max_iter: int = 500) -> float:
    """H(q, p, theta*(q, p)) with the control eliminated."""
    theta = eliminate_control(batch, gamma, tol, max_iter)
    return control_hamiltonian(batch, theta, gamma)


def reduced_hamiltonian_fn(gamma: float, gradients: str = "finite_difference",
                           h_fd: float = REDUCED_FD_STEP, tol: float = 1e-12,
                           max_iter: int = 500) -> HamiltonianFn:
    """
    Reduced Hamiltonian as a HamiltonianFn.

    Args:
        gamma: Regularisation weight
        gradients: 'finite_difference' (central differences of the composition)
            or 'envelope' (partial derivatives at the stationary control)
        h_fd: Finite-difference step
        tol: Control-elimination tolerance
        max_iter: Control-elimination iteration cap

    Returns:
        HamiltonianFn named 'resnet_reduced'
    """
    if gradients not in ("finite_difference", "envelope"):
        raise UsageError(f"unknown gradient mode '{gradients}'")

    def value(s: PhaseBatch) -> float:
        return reduced_hamiltonian(s, gamma, tol, max_iter)

    def fd_grad(s: PhaseBatch) -> Tuple[np.ndarray, np.ndarray]:
        z0 = s.flat()
        g = np.empty_like(z0)
        for k in range(z0.size):
            zp = z0.copy()
            zm = z0.copy()
            zp[k] += h_fd
            zm[k] -= h_fd
            g[k] = (value(PhaseBatch.from_flat(zp, s.n, s.d))
                    - value(PhaseBatch.from_flat(zm, s.n, s.d))) / (2.0 * h_fd)
        half = s.n * s.d
        return g[:half].reshape(s.q.shape), g[half:].reshape(s.p.shape)

    def envelope_grad(s: PhaseBatch) -> Tuple[np.ndarray, np.ndarray]:
        theta = eliminate_control(s, gamma, tol, max_iter)
        z = _preactivation(s.q, theta)
        return (s.p * activation_prime(z)) @ theta.u, activation(z)

    grad = fd_grad if gradients == "finite_difference" else envelope_grad
    return HamiltonianFn(
        name="resnet_reduced",
        value=value,
        grad_q=lambda s: grad(s)[0],
        grad_p=lambda s: grad(s)[1],
        params={"gamma": float(gamma), "gradients": gradients},
    )


# =============================================================================
# SYMPLECTIC LAYER
# =============================================================================
#
# For a fixed control theta the implicit costate update
#     p'_i = p_i - dt * u^T (p'_i * tanh'(z_i)),   z_i = u q_i + b
# is a d x d linear system per sample, so the layer reduces to a fixed point in
# theta alone: theta = Gamma(theta) with Gamma built from p'(theta).

def _layer_explicit(q: np.ndarray, p: np.ndarray, theta: ControlParams, dt: float,
                    gamma: float) -> Dict[str, np.ndarray]:
    u, b = theta.u, theta.b
    d = q.shape[1]
    z = q @ u.T + b
    t = np.tanh(z)
    s = 1.0 - t * t
    M = np.eye(d)[None, :, :] + dt * u.T[None, :, :] * s[:, None, :]
    p_new = np.linalg.solve(M, p[..., None])[..., 0]
    r = s * p_new
    return {
        "t": t, "s": s, "M": M, "p_new": p_new, "r": r,
        "q_new": q + dt * t,
        "gamma_u": (r.T @ q) / gamma,
        "gamma_b": r.sum(axis=0) / gamma,
    }


def _solve_layer_control(q: np.ndarray, p: np.ndarray, dt: float, gamma: float,
                         tol: float, max_iter: int,
                         theta0: Optional[ControlParams] = None) -> ControlParams:
    d = q.shape[1]
    x0 = (theta0 or ControlParams.zeros(d)).flat()

    def update(x):
        e = _layer_explicit(q, p, ControlParams.from_flat(x, d), dt, gamma)
        return np.concatenate([e["gamma_u"].ravel(), e["gamma_b"]])

    x, _, _ = _damped_fixed_point(update, x0, tol, max_iter, "symplectic layer control")
    return ControlParams.from_flat(x, d)


def symplectic_layer_step(batch: PhaseBatch, dt: float, gamma: float, tol: float = 1e-12,
                          max_iter: int = 500) -> PhaseBatch:
    """
    One layer of the symplectic network.

    Solves the coupled implicit recursion
        q_i' = q_i + dt tanh(u* q_i + b*),
        p_i' = p_i - dt u*^T (p_i' * tanh'(u* q_i + b*)),
    where theta* = (u*, b*) is the control eliminated at (q, p').

    Args:
        batch: (q^k, p^k)
        dt: Layer step
        gamma: Regularisation weight
        tol: Fixed-point tolerance
        max_iter: Iteration cap

    Returns:
        (q^{k+1}, p^{k+1})
    """
    if float(dt) == 0.0:
        return batch
    theta = _solve_layer_control(batch.q, batch.p, dt, gamma, tol, max_iter)
    e = _layer_explicit(batch.q, batch.p, theta, dt, gamma)
    return PhaseBatch(e["q_new"], e["p_new"])


def _layer_vjp(q: np.ndarray, theta: ControlParams, e: Dict[str, np.ndarray], dt: float,
               gamma: float, g_q_new: np.ndarray, g_p_new: np.ndarray,
               w_u: np.ndarray, w_b: np.ndarray):
    """
    Reverse-mode sweep through _layer_explicit with theta held independent.

    Returns cotangents (q_bar, p_bar, u_bar, b_bar) for output cotangents
    (g_q_new, g_p_new) on (q', p') and (w_u, w_b) on Gamma.
    """
    u = theta.u
    t, s, M, p_new, r = e["t"], e["s"], e["M"], e["p_new"], e["r"]

    r_bar = (q @ w_u.T + w_b) / gamma
    q_bar = (r @ w_u) / gamma + g_q_new
    s_bar = r_bar * p_new
    p_new_bar = r_bar * s + g_p_new
    p_bar = np.linalg.solve(np.transpose(M, (0, 2, 1)), p_new_bar[..., None])[..., 0]
    M_bar = -p_bar[:, :, None] * p_new[:, None, :]
    u_bar = dt * np.einsum("ik,ijk->kj", s, M_bar)
    s_bar = s_bar + dt * np.einsum("ijk,kj->ik", M_bar, u)
    t_bar = dt * g_q_new - 2.0 * t * s_bar
    z_bar = t_bar * s
    u_bar = u_bar + z_bar.T @ q
    b_bar = z_bar.sum(axis=0)
    q_bar = q_bar + z_bar @ u
    return q_bar, p_bar, u_bar, b_bar


def _layer_backward(q: np.ndarray, theta: ControlParams, e: Dict[str, np.ndarray], dt: float,
                    gamma: float, g_q_new: np.ndarray, g_p_new: np.ndarray):
    """Cotangents on (q, p) including the implicit dependence of theta* on them."""
    d = q.shape[1]
    n_theta = d * d + d
    zero_u = np.zeros((d, d))
    zero_b = np.zeros(d)
    zero_state = np.zeros_like(q)

    a_q, a_p, a_u, a_b = _layer_vjp(q, theta, e, dt, gamma, g_q_new, g_p_new, zero_u, zero_b)
    a_theta = np.concatenate([a_u.ravel(), a_b])

    # Row k of dGamma/dtheta is the theta-cotangent of basis vector e_k on Gamma
    jac = np.empty((n_theta, n_theta))
    for k in range(n_theta):
        basis = np.zeros(n_theta)
        basis[k] = 1.0
        _, _, ju, jb = _layer_vjp(q, theta, e, dt, gamma, zero_state, zero_state,
                                  basis[:d * d].reshape(d, d), basis[d * d:])
        jac[k] = np.concatenate([ju.ravel(), jb])

    w = np.linalg.solve((np.eye(n_theta) - jac).T, a_theta)
    b_q, b_p, _, _ = _layer_vjp(q, theta, e, dt, gamma, zero_state, zero_state,
                                w[:d * d].reshape(d, d), w[d * d:])
    return a_q + b_q, a_p + b_p


# =============================================================================
# EXPLICIT LAYERS
# =============================================================================

def _residual_field(q: np.ndarray, theta: ControlParams) -> np.ndarray:
    return np.tanh(q @ theta.u.T + theta.b)


def _field_vjp(x: np.ndarray, theta: ControlParams, y_bar: np.ndarray):
    s = activation_prime(x @ theta.u.T + theta.b)
    z_bar = y_bar * s
    return z_bar @ theta.u, z_bar.T @ x, z_bar.sum(axis=0)


def euler_layer(q: np.ndarray, theta: ControlParams, dt: float) -> np.ndarray:
    return q + dt * _residual_field(q, theta)


def rk4_layer(q: np.ndarray, theta: ControlParams, dt: float) -> np.ndarray:
    k1 = _residual_field(q, theta)
    k2 = _residual_field(q + 0.5 * dt * k1, theta)
    k3 = _residual_field(q + 0.5 * dt * k2, theta)
    k4 = _residual_field(q + dt * k3, theta)
    return q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler_layer_backward(q, theta, dt, g):
    x_bar, u_bar, b_bar = _field_vjp(q, theta, dt * g)
    return g + x_bar, u_bar, b_bar


def _rk4_layer_backward(q, theta, dt, g):
    k1 = _residual_field(q, theta)
    x2 = q + 0.5 * dt * k1
    k2 = _residual_field(x2, theta)
    x3 = q + 0.5 * dt * k2
    k3 = _residual_field(x3, theta)
    x4 = q + dt * k3

    q_bar = g.copy()
    k_bar = [dt / 6.0 * g, dt / 3.0 * g, dt / 3.0 * g, dt / 6.0 * g]
    u_bar = np.zeros_like(theta.u)
    b_bar = np.zeros_like(theta.b)

    x_bar, du, db = _field_vjp(x4, theta, k_bar[3])
    u_bar += du
    b_bar += db
    q_bar += x_bar
    k_bar[2] = k_bar[2] + dt * x_bar

    x_bar, du, db = _field_vjp(x3, theta, k_bar[2])
    u_bar += du
    b_bar += db
    q_bar += x_bar
    k_bar[1] = k_bar[1] + 0.5 * dt * x_bar

    x_bar, du, db = _field_vjp(x2, theta, k_bar[1])
    u_bar += du
    b_bar += db
    q_bar += x_bar
    k_bar[0] = k_bar[0] + 0.5 * dt * x_bar

    x_bar, du, db = _field_vjp(q, theta, k_bar[0])
    u_bar += du
    b_bar += db
    q_bar += x_bar
    return q_bar, u_bar, b_bar


# =============================================================================
# FORWARD PASS, LOSS, GRADIENTS
# =============================================================================

def _net_shape(config) -> Tuple[int, float, IntegratorKind]:
    return int(config.n_layers), float(config.dt), IntegratorKind.parse(config.integrator)


def forward_pass(config, net_state, inputs: np.ndarray, keep_costates: bool = True) -> LayerTrajectory:
    """
    Push inputs through the network.

    Args:
        config: TrainConfig (n_layers, dt, gamma, integrator, tol, max_iter)
        net_state: List of per-layer ControlParams (euler/rk4) or the initial
            costates p^0 as an (N, d) array (symplectic)
        inputs: (N, d) initial states q^0

    Returns:
        LayerTrajectory with n_layers + 1 states
    """
    n_layers, dt, kind = _net_shape(config)
    q = np.asarray(inputs, dtype=np.float64)
    states = [q]

    if kind is IntegratorKind.SYMPLECTIC:
        p = np.asarray(net_state, dtype=np.float64)
        if p.shape != q.shape:
            raise UsageError(f"initial costates {p.shape} do not match inputs {q.shape}")
        costates = [p]
        controls = []
        theta = None
        for k in range(n_layers):
            try:
                theta = _solve_layer_control(q, p, dt, config.gamma, config.tol,
                                             config.max_iter, theta0=theta)
            except ConvergenceError as exc:
                raise exc.at(k, "resnet_ocp.forward_pass") from None
            e = _layer_explicit(q, p, theta, dt, config.gamma)
            q, p = e["q_new"], e["p_new"]
            states.append(q)
            costates.append(p)
            controls.append(theta)
        return LayerTrajectory(np.stack(states), np.stack(costates) if keep_costates else None,
                               controls)

    return explicit_forward(config, net_state, q)


def explicit_forward(config, layers: List[ControlParams], inputs: np.ndarray) -> LayerTrajectory:
    """
    Push inputs through fixed per-layer controls.

    RK4 networks use RK4 layers; Euler and symplectic networks use
    q' = q + dt tanh(u_k q + b_k), which is the state update of a symplectic
    layer once its control is frozen.
    """
    n_layers, dt, kind = _net_shape(config)
    layers = list(layers)
    if len(layers) != n_layers:
        raise UsageError(f"expected {n_layers} layer controls, got {len(layers)}")
    q = np.asarray(inputs, dtype=np.float64)
    states = [q]
    step = rk4_layer if kind is IntegratorKind.RK4 else euler_layer
    for theta in layers:
        q = step(q, theta, dt)
        states.append(q)
    return LayerTrajectory(np.stack(states), None, layers)


def loss_and_accuracy(final_q: np.ndarray, labels: np.ndarray,
                      loss: str = "squared") -> Tuple[float, float]:
    """
    Terminal residual and classification accuracy.

    Args:
        final_q: (N, d) final states, or (N,) readout coordinates
        labels: (N,) labels in {0, 1}
        loss: 'squared' (sum (pi - c)^2) or 'cross_entropy'

    Returns:
        (residual, accuracy)
    """
    prob = readout(final_q)
    c = np.asarray(labels, dtype=np.float64)
    if loss == "squared":
        residual = float(np.sum((prob - c) ** 2))
    elif loss == "cross_entropy":
        eps = np.finfo(np.float64).tiny
        residual = float(-np.sum(c * np.log(np.maximum(prob, eps))
                                 + (1.0 - c) * np.log(np.maximum(1.0 - prob, eps))))
    else:
        raise UsageError(f"unknown loss '{loss}'")
    predicted = (prob >= 0.5).astype(int)
    accuracy = float(accuracy_score(np.asarray(labels).astype(int), predicted))
    return residual, accuracy


def _terminal_cotangent(final_q: np.ndarray, labels: np.ndarray, loss: str) -> np.ndarray:
    prob = readout(final_q)
    c = np.asarray(labels, dtype=np.float64)
    g = np.zeros_like(final_q)
    if loss == "squared":
        g[:, 0] = 2.0 * (prob - c) * prob * (1.0 - prob)
    else:
        g[:, 0] = prob - c
    return g


def parameter_gradient(config, layers: List[ControlParams], inputs: np.ndarray,
                       labels: np.ndarray) -> Tuple[List[ControlParams], LayerTrajectory]:
    """
    Reverse-mode gradient of terminal loss plus (gamma/2) dt sum_k |theta_k|^2
    with respect to per-layer controls (euler/rk4 networks).
    """
    _, dt, kind = _net_shape(config)
    traj = forward_pass(config, layers, inputs)
    g = _terminal_cotangent(traj.final, labels, config.loss)
    backward = _euler_layer_backward if kind is IntegratorKind.EULER else _rk4_layer_backward
    grads: List[Optional[ControlParams]] = [None] * len(layers)
    for k in reversed(range(len(layers))):
        g, u_bar, b_bar = backward(traj.q[k], layers[k], dt, g)
        theta = layers[k]
        grads[k] = ControlParams(u_bar + config.gamma * dt * theta.u,
                                 b_bar + config.gamma * dt * theta.b)
    return grads, traj


def costate_gradient(config, p0: np.ndarray, inputs: np.ndarray,
                     labels: np.ndarray) -> Tuple[np.ndarray, LayerTrajectory]:
    """
    Adjoint gradient of the terminal loss with respect to the initial costates
    of the symplectic network (shooting on p^0).

    Each layer is differentiated through its converged control fixed point by
    the implicit-function theorem.
    """
    _, dt, _ = _net_shape(config)
    traj = forward_pass(config, p0, inputs)
    g_q = _terminal_cotangent(traj.final, labels, config.loss)
    g_p = np.zeros_like(g_q)
    for k in reversed(range(len(traj.controls))):
        theta = traj.controls[k]
        e = _layer_explicit(traj.q[k], traj.p[k], theta, dt, config.gamma)
        g_q, g_p = _layer_backward(traj.q[k], theta, e, dt, config.gamma, g_q, g_p)
    return g_p, traj


def trained_controls(config, net_state, train_inputs: np.ndarray) -> List[ControlParams]:
    """
    Per-layer controls of a trained network.

    The symplectic network stores costates tied to its training samples, so
    its controls are read off the training trajectory.
    """
    if IntegratorKind.parse(config.integrator) is IntegratorKind.SYMPLECTIC:
        return forward_pass(config, net_state, train_inputs, keep_costates=False).controls
    return list(net_state)


def evaluate(config, layers: List[ControlParams], inputs: np.ndarray,
             labels: np.ndarray) -> Tuple[float, float]:
    """Residual and accuracy of fixed layer controls on any split."""
    traj = explicit_forward(config, layers, inputs)
    return loss_and_accuracy(traj.final, labels, config.loss)
