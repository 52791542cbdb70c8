"""
GeoFlow: Peakon System
======================
N-particle solution of the dispersionless Camassa-Holm equation,

    H(q, p) = sum_{i,k} p_i p_k K(q_i - q_k),

with a Gaussian or exponential kernel, stepped by the generating-function
integrator. For the exponential kernel the traces of powers of the Lax
matrix L_ij = sqrt(p_i p_j) exp(-s |q_i - q_j|) are conserved for the right
exponent scale s; calibrate_lax_convention decides between s = 1 and s = 1/2.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from model.generating_function import GeneratingFunctionIntegrator
from model.hamiltonian import HamiltonianFn, PhaseBatch
from utils.errors import ConvergenceError, NumericalDomainError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

KERNELS = ("gaussian", "exponential")
EXPONENT_SCALES = (1.0, 0.5)
DEFAULT_EXPONENT_SCALE = 0.5


@dataclass(frozen=True)
class PeakonState:
    """Positions and momenta of N_b peakons with their interaction kernel."""
    q: np.ndarray
    p: np.ndarray
    kernel: str = "exponential"
    scale: float = 1.0

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, copy=True).ravel()
        p = np.array(self.p, dtype=np.float64, copy=True).ravel()
        if q.shape != p.shape or q.size < 1:
            raise UsageError(f"need matching non-empty q and p, got {q.shape} and {p.shape}")
        if self.kernel not in KERNELS:
            raise UsageError(f"unknown kernel '{self.kernel}', expected one of {list(KERNELS)}")
        if not self.scale > 0:
            raise UsageError(f"kernel scale must be positive, got {self.scale}")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    def batch(self) -> PhaseBatch:
        return PhaseBatch(self.q[:, None], self.p[:, None])

    def with_batch(self, s: PhaseBatch) -> "PeakonState":
        return PeakonState(s.q[:, 0], s.p[:, 0], self.kernel, self.scale)


@dataclass(frozen=True)
class LaxPair:
    L: np.ndarray
    P: np.ndarray


def kernel_value(x: np.ndarray, kernel: str, scale: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kernel == "gaussian":
        return np.exp(-0.5 * (x / scale) ** 2)
    if kernel == "exponential":
        return np.exp(-np.abs(x) / scale)
    raise UsageError(f"unknown kernel '{kernel}'")


def kernel_derivative(x: np.ndarray, kernel: str, scale: float = 1.0) -> np.ndarray:
    """K'(x); the exponential kernel uses K'(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    if kernel == "gaussian":
        return -(x / scale ** 2) * np.exp(-0.5 * (x / scale) ** 2)
    if kernel == "exponential":
        return -np.sign(x) / scale * np.exp(-np.abs(x) / scale)
    raise UsageError(f"unknown kernel '{kernel}'")


def _differences(q: np.ndarray) -> np.ndarray:
    return q[:, None] - q[None, :]


def peakon_hamiltonian(s: PeakonState) -> float:
    """sum_{i,k} p_i p_k K(q_i - q_k)."""
    K = kernel_value(_differences(s.q), s.kernel, s.scale)
    return float(s.p @ K @ s.p)


def peakon_hamiltonian_fn(kernel: str = "exponential", scale: float = 1.0) -> HamiltonianFn:
    """Peakon Hamiltonian on (N_b, 1) phase batches."""
    if kernel not in KERNELS:
        raise UsageError(f"unknown kernel '{kernel}', expected one of {list(KERNELS)}")

    def value(b: PhaseBatch) -> float:
        q, p = b.q[:, 0], b.p[:, 0]
        return float(p @ kernel_value(_differences(q), kernel, scale) @ p)

    def grad_q(b: PhaseBatch) -> np.ndarray:
        q, p = b.q[:, 0], b.p[:, 0]
        dK = kernel_derivative(_differences(q), kernel, scale)
        return (2.0 * p * (dK @ p))[:, None]

    def grad_p(b: PhaseBatch) -> np.ndarray:
        q, p = b.q[:, 0], b.p[:, 0]
        return (2.0 * kernel_value(_differences(q), kernel, scale) @ p)[:, None]

    return HamiltonianFn(name=f"peakon_{kernel}", value=value, grad_q=grad_q, grad_p=grad_p,
                         params={"kernel": kernel, "scale": float(scale)})


def peakon_velocity(s: PeakonState, x: np.ndarray) -> np.ndarray:
    """u(x) = sum_i p_i K(x - q_i)."""
    x = np.asarray(x, dtype=np.float64)
    return kernel_value(x[..., None] - s.q, s.kernel, s.scale) @ s.p


def total_momentum(s: PeakonState) -> float:
    return float(np.sum(s.p))


def peakon_integrator(kernel: str, scale: float, m: int, tol: float = 1e-12,
                      max_iter: int = 100) -> GeneratingFunctionIntegrator:
    return GeneratingFunctionIntegrator.from_hamiltonian(peakon_hamiltonian_fn(kernel, scale), m,
                                                         tol, max_iter)


def peakon_step(s: PeakonState, dt: float, m: int = 2,
                integrator: Optional[GeneratingFunctionIntegrator] = None) -> PeakonState:
    """One generating-function step of order m."""
    if integrator is None:
        integrator = peakon_integrator(s.kernel, s.scale, m)
    return s.with_batch(integrator(s.batch(), dt))


def lax_matrices(s: PeakonState, exponent_scale: float = DEFAULT_EXPONENT_SCALE) -> LaxPair:
    """
    L_ij = sqrt(p_i p_j) exp(-s |q_i - q_j|),
    P_ij = -2 sqrt(p_i p_j) sign(q_i - q_j) exp(-s |q_i - q_j|).
    """
    if np.any(s.p <= 0):
        bad = int(np.flatnonzero(s.p <= 0)[0])
        raise NumericalDomainError(f"Lax matrices need positive momenta (index {bad})")
    diff = _differences(s.q)
    root = np.sqrt(np.outer(s.p, s.p))
    decay = np.exp(-float(exponent_scale) * np.abs(diff))
    return LaxPair(root * decay, -2.0 * root * np.sign(diff) * decay)


def conserved_traces(L: np.ndarray, k_max: int) -> np.ndarray:
    """[Tr(L^2), ..., Tr(L^k_max)]."""
    L = np.asarray(L, dtype=np.float64)
    if k_max > L.shape[0]:
        raise UsageError(f"k_max={k_max} exceeds the number of peakons {L.shape[0]}")
    out = []
    power = L.copy()
    for _ in range(2, int(k_max) + 1):
        power = power @ L
        out.append(float(np.trace(power)))
    return np.array(out)


def run_peakons(s: PeakonState, dt: float, steps: int, m: int = 2, every: int = 1,
                exponent_scale: float = DEFAULT_EXPONENT_SCALE) -> List[Dict[str, float]]:
    """
    Integrate and record (t, q..., p..., H, TrL2, TrL3) every `every` steps.

    Lax traces are NaN where they are undefined (Gaussian kernel or
    nonpositive momenta).
    """
    integrator = peakon_integrator(s.kernel, s.scale, m)

    def record(k: int, state: PeakonState) -> Dict[str, float]:
        row = {"t": k * dt}
        row.update({f"q{i}": float(v) for i, v in enumerate(state.q)})
        row.update({f"p{i}": float(v) for i, v in enumerate(state.p)})
        row["H"] = peakon_hamiltonian(state)
        traces = [np.nan, np.nan]
        if state.kernel == "exponential" and np.all(state.p > 0):
            t = conserved_traces(lax_matrices(state, exponent_scale).L, min(3, state.n))
            traces[:len(t)] = t
        row["TrL2"], row["TrL3"] = traces
        return row

    rows = [record(0, s)]
    for k in range(1, int(steps) + 1):
        try:
            s = peakon_step(s, dt, m, integrator)
        except ConvergenceError as exc:
            raise exc.at(k, "peakon.run_peakons") from None
        if k % every == 0:
            rows.append(record(k, s))
    return rows


def relative_drift(series) -> float:
    series = np.asarray(series, dtype=np.float64)
    return float(np.max(np.abs(series - series[0])) / abs(series[0]))


def calibrate_lax_convention(s0: PeakonState, dt: float, t_final: float, m: int = 2) -> Dict[str, object]:
    """
    Integrate once and compare trace drift under both exponent scales.

    Returns:
        {'drift': {scale: max relative drift of TrL2 and TrL3}, 'selected': scale}
    """
    if s0.kernel != "exponential":
        raise UsageError("Lax calibration needs the exponential kernel")
    steps = int(round(t_final / dt))
    integrator = peakon_integrator(s0.kernel, s0.scale, m)
    k_max = min(3, s0.n)
    history = {scale: [conserved_traces(lax_matrices(s0, scale).L, k_max)] for scale in EXPONENT_SCALES}
    s = s0
    for k in range(1, steps + 1):
        s = peakon_step(s, dt, m, integrator)
        for scale in EXPONENT_SCALES:
            history[scale].append(conserved_traces(lax_matrices(s, scale).L, k_max))

    drift = {}
    for scale, rows in history.items():
        rows = np.array(rows)
        drift[scale] = max((relative_drift(rows[:, j]) for j in range(rows.shape[1])), default=0.0)
    selected = min(drift, key=drift.get)
    logger.info(f"[OK] Lax calibration: drift {drift}, selected exponent scale {selected}")
    return {"drift": drift, "selected": selected}


def overtaking_state(n: int = 3, kernel: str = "exponential", scale: float = 1.0) -> PeakonState:
    """
    n peakons spaced 4 apart, faster ones behind, with momenta from 1.5 down to 0.5.

    For n = 3 this is q = (-4, 0, 4), p = (1.5, 1, 0.5).
    """
    if n < 1:
        raise UsageError(f"need at least one peakon, got {n}")
    q = 4.0 * (np.arange(n) - 0.5 * (n - 1))
    p = np.linspace(1.5, 0.5, n) if n > 1 else np.ones(1)
    return PeakonState(q, p, kernel, scale)
