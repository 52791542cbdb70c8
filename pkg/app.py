"""
GeoFlow: Experiment Command Line
================================
Every experiment as a reproducible subcommand. Each invocation validates its
flags into a config model, creates runs/<command>-<fingerprint>/ and writes
its tables there.

    python app.py rigid-body --integrator lphj --dt 0.01 --steps 100000
    python app.py train --dataset circles --integrator symplectic
    python app.py peakon --kernel exponential --n 3 --t-final 20
    python app.py lp-field --variant conservative --nx 128
    python app.py madelung-check --nx 256 --nu 0.5 --seeds 20
    python app.py pso-check --trials 100
    python app.py gradcheck

Exit codes: 0 success, 1 usage error, 2 numerical or convergence failure.
"""

import argparse
import os
import sys
import time
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

# Add project root to path
PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, PROJECT_ROOT)

from model.hamiltonian import HamiltonianFn, PhaseBatch, check_gradients, harmonic_oscillator, random_batch
from model.lie_poisson import (
    deep_lp_hamiltonian,
    run_rigidbody,
    run_semidirect,
    semidirect_mass,
    semidirect_momentum,
    smooth_semidirect_state,
)
from model.madelung import check_equivalence
from model.peakon import (
    DEFAULT_EXPONENT_SCALE,
    calibrate_lax_convention,
    overtaking_state,
    peakon_hamiltonian_fn,
    run_peakons,
)
from model.resnet_ocp import reduced_hamiltonian_fn
from model.symbols import EXACT_CHECKS, property_suite
from model.train_model import ResNetTrainer
from utils import logger as logging_setup
from utils.artifacts import RunArtifact, create_run
from utils.config import (
    GradCheckConfig,
    LPFieldConfig,
    MadelungConfig,
    PeakonConfig,
    PsoCheckConfig,
    RigidBodyConfig,
    TrainConfig,
    build_config,
    load_config,
)
from utils.errors import ConvergenceError, GeoFlowError, NumericalDomainError, UsageError

logger = logging_setup.get_logger("app")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_CHECK_FAILED = 1

RIGIDBODY_SCHEMA = ("step", "pi1", "pi2", "pi3", "norm", "energy")
FIELD_SCHEMA = ("step", "index", "x", "m", "rho")
FIELD_DIAGNOSTICS_SCHEMA = ("step", "mass", "momentum")
GRADCHECK_SCHEMA = ("hamiltonian", "max_deviation")

# Deviation above which an exact algebra check fails
CHECK_WARN_LEVEL = 1e-6
GRADCHECK_TOLERANCE = 1e-5


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_ints(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _config_from(args: argparse.Namespace, model, fields: Dict[str, str]):
    """
    Merge an optional --config JSON file with the explicitly given flags.

    Args:
        args: Parsed arguments
        model: Config model
        fields: Map from argparse dest to config field name
    """
    values = load_config(args.config, model).model_dump() if args.config else {}
    for dest, name in fields.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[name] = value
    return build_config(model, values)


def _start(command: str, config, args: argparse.Namespace) -> RunArtifact:
    run = create_run(command, config, args.out)
    logger.info("=" * 60)
    logger.info(f"GEOFLOW {command.upper()}  run {run.run_id}")
    logger.info("=" * 60)
    return run


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_rigid_body(args: argparse.Namespace) -> int:
    config = _config_from(args, RigidBodyConfig, {
        "integrator": "integrator", "dt": "dt", "steps": "steps", "seed": "seed",
        "every": "every", "explicit": "implicit",
    })
    run = _start("rigid-body", config, args)
    rng = np.random.default_rng(config.seed)
    pi0 = rng.standard_normal(3)
    pi0 /= np.linalg.norm(pi0)
    inertia = np.asarray(config.inertia, dtype=np.float64)

    rows = run_rigidbody(config.integrator, pi0, inertia, config.dt, config.steps, config.every,
                         config.implicit, config.tol, config.max_iter)
    pi = rows[:, 1:]
    norms = np.linalg.norm(pi, axis=1)
    energies = 0.5 * np.sum(pi * pi / inertia, axis=1)
    table = np.column_stack([rows, norms, energies])
    table_rows = [(int(r[0]),) + tuple(r[1:]) for r in table]
    run.write_table("trajectory.csv", table_rows, RIGIDBODY_SCHEMA)
    logger.info(f"[OK] {config.integrator}: max | |Pi_k| - |Pi_0| | = {np.max(np.abs(norms - norms[0])):.3e}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from(args, TrainConfig, {
        "dataset": "dataset", "integrator": "integrator", "layers": "n_layers", "dt": "dt",
        "iters": "iterations", "seed": "seed", "loss": "loss", "snapshots": "snapshots",
        "n_points": "n_points", "lr": "learning_rate", "gamma": "gamma",
    })
    run = _start("train", config, args)
    ResNetTrainer(config).train_and_save(run)
    return EXIT_OK


def cmd_peakon(args: argparse.Namespace) -> int:
    config = _config_from(args, PeakonConfig, {
        "kernel": "kernel", "n": "n", "dt": "dt", "t_final": "t_final", "order": "order",
        "kernel_scale": "kernel_scale", "exponent_scale": "exponent_scale", "every": "every",
        "seed": "seed",
    })
    run = _start("peakon", config, args)
    s0 = overtaking_state(config.n, config.kernel, config.kernel_scale)
    steps = int(round(config.t_final / config.dt))

    exponent_scale = config.exponent_scale
    if exponent_scale is None:
        exponent_scale = DEFAULT_EXPONENT_SCALE
        if args.calibrate and config.kernel == "exponential":
            result = calibrate_lax_convention(s0, config.dt, config.t_final, config.order)
            exponent_scale = result["selected"]
            run.write_document("calibration.json", {
                "drift": {str(k): v for k, v in result["drift"].items()},
                "selected": result["selected"],
            })

    rows = run_peakons(s0, config.dt, steps, config.order, config.every, exponent_scale)
    schema = (["t"] + [f"q{i}" for i in range(s0.n)] + [f"p{i}" for i in range(s0.n)]
              + ["H", "TrL2", "TrL3"])
    run.write_table("trajectory.csv", rows, schema)
    energy = np.array([r["H"] for r in rows])
    logger.info(f"[OK] {steps} steps, max |H - H_0| = {np.max(np.abs(energy - energy[0])):.3e}")
    return EXIT_OK


def cmd_lp_field(args: argparse.Namespace) -> int:
    config = _config_from(args, LPFieldConfig, {
        "variant": "variant", "nx": "nx", "dt": "dt", "steps": "steps", "nu": "nu",
        "every": "every", "seed": "seed",
    })
    run = _start("lp-field", config, args)
    s0 = smooth_semidirect_state(config.nx, config.nu)
    H = deep_lp_hamiltonian(config.nu)
    states = run_semidirect(s0, H, config.dt, config.steps, config.variant, config.every)

    field_rows: List[tuple] = []
    diagnostics: List[tuple] = []
    x = s0.rho.nodes()
    for k, state in enumerate(states):
        step = k * config.every
        for i in range(state.n):
            field_rows.append((step, i, float(x[i]), float(state.m.values[i]), float(state.rho.values[i])))
        diagnostics.append((step, semidirect_mass(state), semidirect_momentum(state)))
    run.write_table("fields.csv", field_rows, FIELD_SCHEMA)
    run.write_table("diagnostics.csv", diagnostics, FIELD_DIAGNOSTICS_SCHEMA)
    drift = abs(diagnostics[-1][1] - diagnostics[0][1])
    logger.info(f"[OK] {config.variant}: mass drift {drift:.3e} over {config.steps} steps")
    return EXIT_OK


def cmd_madelung_check(args: argparse.Namespace) -> int:
    config = _config_from(args, MadelungConfig, {
        "nx": "nx", "nu": "nu", "seeds": "seeds", "bandlimit": "bandlimit",
        "phase_scaling": "phase_scaling", "derivative": "derivative", "n_jobs": "n_jobs",
    })
    run = _start("madelung-check", config, args)
    cases = check_equivalence(config.nx, config.nu, config.seeds, config.bandlimit,
                              config.phase_scaling, config.derivative, config.n_jobs)
    run.write_document("defects.json", {
        "phase_scaling": config.phase_scaling,
        "max_defect": max(c["defect"] for c in cases),
        "cases": cases,
    })
    return EXIT_OK


def cmd_pso_check(args: argparse.Namespace) -> int:
    config = _config_from(args, PsoCheckConfig, {"trials": "trials", "nx": "nx", "seed": "seed"})
    run = _start("pso-check", config, args)
    defects = property_suite(np.random.default_rng(config.seed), config.trials, config.nx)
    failed = []
    for name, value in defects.items():
        exact = name in EXACT_CHECKS
        flag = "[OK]"
        if exact and not value <= CHECK_WARN_LEVEL:
            flag = "[!]"
            failed.append(name)
        logger.info(f"{flag} {name:32s} {value:.3e}{'' if exact else '  (reported only)'}")
    run.write_document("defects.json", {"defects": defects, "exact_checks": list(EXACT_CHECKS),
                                        "failed": failed})
    if failed:
        logger.error(f"[!] {len(failed)} exact check(s) above {CHECK_WARN_LEVEL:g}: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def gradcheck_cases(config: GradCheckConfig) -> List[Tuple[HamiltonianFn, PhaseBatch]]:
    """Every registered Hamiltonian paired with a seeded evaluation point."""
    rng = np.random.default_rng(config.seed)
    peakons = PhaseBatch(np.array([[-2.0], [0.5], [3.0]]), np.array([[1.2], [0.8], [0.4]]))
    return [
        (harmonic_oscillator(), random_batch(rng, config.n, config.d)),
        (harmonic_oscillator(2.0), random_batch(rng, config.n, config.d)),
        (reduced_hamiltonian_fn(1.0, gradients="envelope"), random_batch(rng, config.n, config.d, 0.5)),
        (peakon_hamiltonian_fn("gaussian"), peakons),
        (peakon_hamiltonian_fn("exponential"), peakons),
    ]


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _config_from(args, GradCheckConfig, {"seed": "seed", "h_fd": "h_fd"})
    run = _start("gradcheck", config, args)
    rows = []
    failed = []
    for H, point in gradcheck_cases(config):
        deviation = check_gradients(H, point, config.h_fd)
        flag = "[OK]"
        if not deviation <= GRADCHECK_TOLERANCE:
            flag = "[!]"
            failed.append(H.name)
        logger.info(f"{flag} {H.name:24s} {deviation:.3e}")
        rows.append((H.name, deviation))
    run.write_table("gradcheck.csv", rows, GRADCHECK_SCHEMA)
    if failed:
        logger.error(f"[!] gradients off by more than {GRADCHECK_TOLERANCE:g}: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "rigid-body": cmd_rigid_body,
    "train": cmd_train,
    "peakon": cmd_peakon,
    "lp-field": cmd_lp_field,
    "madelung-check": cmd_madelung_check,
    "pso-check": cmd_pso_check,
    "gradcheck": cmd_gradcheck,
}


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geoflow", description="GeoFlow geometric integration experiments")
    parser.add_argument("--out", default=None, help="artifact root (default $GEOFLOW_RUNS or ./runs)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = command("rigid-body", "free rigid body trajectory")
    p.add_argument("--integrator", choices=["euler", "rk4", "lphj"], default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--every", type=int, default=None)
    p.add_argument("--explicit", action="store_const", const=False, default=None,
                   help="explicit angular velocity in the lphj step")

    p = command("train", "ResNet training on spirals or circles")
    p.add_argument("--dataset", choices=["spirals", "circles"], default=None)
    p.add_argument("--integrator", choices=["euler", "rk4", "symplectic"], default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--loss", choices=["squared", "cross_entropy"], default=None)
    p.add_argument("--snapshots", type=_csv_ints, default=None, help="e.g. 20,30,50")
    p.add_argument("--n-points", dest="n_points", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)

    p = command("peakon", "N-peakon trajectory with Lax traces")
    p.add_argument("--kernel", choices=["gaussian", "exponential"], default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-final", dest="t_final", type=float, default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--kernel-scale", dest="kernel_scale", type=float, default=None)
    p.add_argument("--exponent-scale", dest="exponent_scale", type=float, default=None)
    p.add_argument("--every", type=int, default=None)
    p.add_argument("--calibrate", action="store_true",
                   help="pick the Lax exponent scale from a calibration run")

    p = command("lp-field", "semidirect Lie-Poisson field snapshots")
    p.add_argument("--variant", choices=["literal", "conservative"], default=None)
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--every", type=int, default=None)

    p = command("madelung-check", "Madelung/NLS equivalence defects")
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--bandlimit", type=int, default=None)
    p.add_argument("--phase-scaling", dest="phase_scaling", choices=["plain", "sqrt_hbar"], default=None)
    p.add_argument("--derivative", choices=["spectral", "finite_difference"], default=None)
    p.add_argument("--n-jobs", dest="n_jobs", type=int, default=None)

    p = command("pso-check", "symbol algebra property suite")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--nx", type=int, default=None)

    p = command("gradcheck", "analytic vs finite-difference Hamiltonian gradients")
    p.add_argument("--h-fd", dest="h_fd", type=float, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        Exit code: 0 success, 1 usage error or failed check, 2 numerical or
        convergence failure
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        logger.error(f"[ERROR] {exc}")
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging_setup.configure("DEBUG" if args.verbose else None)
    started = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except UsageError as exc:
        logger.error(f"[ERROR] {exc}")
        return EXIT_USAGE
    except (NumericalDomainError, ConvergenceError) as exc:
        logger.error(f"[ERROR] numerical failure: {exc}")
        return EXIT_NUMERICAL
    except GeoFlowError as exc:
        logger.error(f"[ERROR] {exc}")
        return EXIT_USAGE
    if code == EXIT_OK:
        logger.info(f"[SUCCESS] {args.command} finished in {time.perf_counter() - started:.1f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
