"""
GeoFlow: Madelung Transform
===========================
Maps hydrodynamic variables (rho, lambda) to wave functions

    psi = sqrt(rho) exp(i lambda / s),    s = 1 or sqrt(hbar),

and checks numerically that the free NLS Hamiltonian (hbar/2) |grad psi|^2
equals the mean-field-game Hamiltonian

    1/2 int rho |omega|^2 + nu^4/8 int rho |grad log rho|^2

when hbar = nu^4 and omega = grad lambda is divergence free (constant in 1D).
"""

from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from joblib import Parallel, delayed
from scipy import fft
from scipy.integrate import cumulative_trapezoid

from model.symbols import GridFunction, diff_values
from utils.errors import NumericalDomainError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

PHASE_SCALINGS = ("plain", "sqrt_hbar")
DERIVATIVES = ("spectral", "finite_difference")


@dataclass(frozen=True)
class WaveField:
    """Complex wave function on a periodic mesh."""
    psi: np.ndarray
    dx: float
    hbar: float
    mass: float = 1.0

    def __post_init__(self):
        psi = np.array(self.psi, dtype=np.complex128, copy=True).ravel()
        if not np.all(np.isfinite(psi)):
            raise NumericalDomainError("non-finite value in psi")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def norm(self) -> float:
        """int |psi|^2 dx (tracked, never forced)."""
        return float(np.sum(np.abs(self.psi) ** 2) * self.dx)


@dataclass(frozen=True)
class MadelungPair:
    """Density rho > 0, phase lambda and noise level nu."""
    rho: GridFunction
    lam: GridFunction
    nu: float

    def __post_init__(self):
        if self.rho.mesh != self.lam.mesh:
            raise UsageError(f"mesh mismatch: {self.rho.mesh} vs {self.lam.mesh}")
        if np.any(self.rho.values <= 0):
            bad = int(np.flatnonzero(self.rho.values <= 0)[0])
            raise NumericalDomainError(f"nonpositive density at grid index {bad}")

    @property
    def hbar(self) -> float:
        return float(self.nu) ** 4


def spectral_derivative(f: np.ndarray, dx: float) -> np.ndarray:
    """Fourier derivative of periodic samples; the Nyquist mode is dropped."""
    f = np.asarray(f)
    n = f.size
    k = 2.0 * np.pi * fft.fftfreq(n, d=dx)
    if n % 2 == 0:
        k[n // 2] = 0.0
    out = fft.ifft(1j * k * fft.fft(f))
    return out.real if np.isrealobj(f) else out


def derivative(f: np.ndarray, dx: float, method: str = "spectral") -> np.ndarray:
    if method == "spectral":
        return spectral_derivative(f, dx)
    if method == "finite_difference":
        return diff_values(np.asarray(f), dx, 1)
    raise UsageError(f"unknown derivative '{method}', expected one of {list(DERIVATIVES)}")


def _phase_scale(hbar: float, phase_scaling: str) -> float:
    if phase_scaling == "plain":
        return 1.0
    if phase_scaling == "sqrt_hbar":
        if not hbar > 0:
            raise UsageError("sqrt_hbar phase scaling needs hbar > 0")
        return float(np.sqrt(hbar))
    raise UsageError(f"unknown phase scaling '{phase_scaling}', expected one of {list(PHASE_SCALINGS)}")


def madelung_forward(pair: MadelungPair, phase_scaling: str = "plain") -> WaveField:
    """
    psi = sqrt(rho) exp(i lambda / s).

    Args:
        pair: Hydrodynamic variables
        phase_scaling: 'plain' (s = 1) or 'sqrt_hbar' (s = nu^2)

    Returns:
        WaveField with hbar = nu^4 and unit mass
    """
    s = _phase_scale(pair.hbar, phase_scaling)
    psi = np.sqrt(pair.rho.values) * np.exp(1j * pair.lam.values / s)
    return WaveField(psi, pair.rho.dx, pair.hbar)


def madelung_inverse(w: WaveField, nu: float, phase_scaling: str = "plain") -> MadelungPair:
    """rho = |psi|^2, lambda = s arg(psi) in (-s pi, s pi]."""
    s = _phase_scale(float(nu) ** 4, phase_scaling)
    rho = np.abs(w.psi) ** 2
    lam = s * np.angle(w.psi)
    return MadelungPair(GridFunction(rho, w.dx), GridFunction(lam, w.dx), float(nu))


def nls_hamiltonian(w: WaveField, method: str = "spectral") -> float:
    """(hbar / 2m) int |grad psi|^2 dx."""
    grad = derivative(w.psi, w.dx, method)
    return float(w.hbar / (2.0 * w.mass) * np.sum(np.abs(grad) ** 2) * w.dx)


def _require_divergence_free(omega: GridFunction) -> float:
    values = omega.values
    spread = float(np.max(values) - np.min(values))
    if spread > 1e-12 * max(1.0, float(np.max(np.abs(values)))):
        raise UsageError("velocity must be divergence free (constant on a 1D periodic mesh); "
                         "the equivalence assumes incompressible omega")
    return float(values[0])


def mfg_hamiltonian(pair: MadelungPair, omega: GridFunction, method: str = "spectral") -> float:
    """1/2 int rho omega^2 + nu^4/8 int rho (grad log rho)^2."""
    _require_divergence_free(omega)
    rho = pair.rho.values
    glog = derivative(np.log(rho), pair.rho.dx, method)
    density = 0.5 * rho * omega.values ** 2 + 0.125 * pair.hbar * rho * glog ** 2
    return float(np.sum(density) * pair.rho.dx)


def phase_from_velocity(omega: GridFunction) -> GridFunction:
    """lambda(x) = int_0^x omega."""
    lam = cumulative_trapezoid(omega.values, dx=omega.dx, initial=0.0)
    return omega.like(lam)


def equivalence_defect(pair: MadelungPair, omega: GridFunction, phase_scaling: str = "sqrt_hbar",
                       method: str = "spectral") -> float:
    """|H_NLS(psi(pair)) - H_MFG(pair, omega)| with hbar = nu^4."""
    h_nls = nls_hamiltonian(madelung_forward(pair, phase_scaling), method)
    h_mfg = mfg_hamiltonian(pair, omega, method)
    return abs(h_nls - h_mfg)


def random_density(rng: np.random.Generator, nx: int, bandlimit: int = 8,
                   amplitude: float = 0.3) -> GridFunction:
    """Positive density on [0, 2 pi) whose logarithm has modes k <= bandlimit."""
    dx = 2.0 * np.pi / nx
    x = dx * np.arange(nx)
    log_rho = np.zeros(nx)
    for k in range(1, bandlimit + 1):
        a, b = rng.standard_normal(2)
        log_rho += amplitude * (a * np.cos(k * x) + b * np.sin(k * x)) / k
    rho = np.exp(log_rho)
    return GridFunction(rho / (np.sum(rho) * dx), dx)


def equivalence_case(seed: int, nx: int, nu: float, bandlimit: int = 8,
                     phase_scaling: str = "sqrt_hbar", method: str = "spectral") -> Dict[str, float]:
    """
    One seeded equivalence check.

    The constant velocity is a whole multiple of nu^2 so the scaled phase
    stays periodic.
    """
    rng = np.random.default_rng(seed)
    rho = random_density(rng, nx, bandlimit)
    winding = int(rng.integers(1, 4))
    omega = rho.like(np.full(nx, winding * float(nu) ** 2))
    pair = MadelungPair(rho, phase_from_velocity(omega), float(nu))
    defect = equivalence_defect(pair, omega, phase_scaling, method)
    return {"seed": int(seed), "n": int(nx), "nu": float(nu), "defect": float(defect)}


def check_equivalence(nx: int, nu: float, seeds: int, bandlimit: int = 8,
                      phase_scaling: str = "sqrt_hbar", method: str = "spectral",
                      n_jobs: int = 1) -> List[Dict[str, float]]:
    """Run equivalence_case over seeds 0..seeds-1."""
    results = Parallel(n_jobs=n_jobs)(
        delayed(equivalence_case)(seed, nx, nu, bandlimit, phase_scaling, method)
        for seed in range(int(seeds))
    )
    worst = max(r["defect"] for r in results)
    logger.info(f"[OK] madelung equivalence over {seeds} seeds: max defect {worst:.3e}")
    return list(results)
