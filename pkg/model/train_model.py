"""
GeoFlow: ResNet Training Module
===============================
Trains continuous ResNets on the two-class benchmarks with one of three
layer integrators:
1. euler / rk4: gradient descent on per-layer controls theta_k
2. symplectic: shooting on the initial costates p^0 through the implicit
   generating-function recursion of the reduced Hamiltonian
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from data.datasets import Dataset, generate_splits
from model.resnet_ocp import (
    ControlParams,
    IntegratorKind,
    LayerTrajectory,
    costate_gradient,
    evaluate,
    forward_pass,
    loss_and_accuracy,
    parameter_gradient,
    trained_controls,
)
from utils.artifacts import RunArtifact, load_state
from utils.config import TrainConfig
from utils.errors import ConvergenceError, UsageError
from utils.logger import get_logger

logger = get_logger(__name__)

RUNLOG_SCHEMA = ("iteration", "residual", "accuracy")
SNAPSHOT_SCHEMA = ("layer", "sample", "x", "y", "label")


@dataclass
class RunLog:
    """Per-iteration training history plus the trained network state."""
    residual: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    wall_clock: float = 0.0
    final_state: object = None
    final_controls: Optional[List[ControlParams]] = None
    final_residual: Optional[float] = None
    final_accuracy: Optional[float] = None
    test_residual: Optional[float] = None
    test_accuracy: Optional[float] = None

    def __len__(self) -> int:
        return len(self.residual)

    def rows(self):
        return [(k, r, a) for k, (r, a) in enumerate(zip(self.residual, self.accuracy))]

    def smoothed_residual(self, window: int = 100) -> np.ndarray:
        """Mean residual over consecutive non-overlapping windows."""
        r = np.asarray(self.residual, dtype=np.float64)
        n = len(r) // window
        if n == 0:
            return r.copy()
        return r[:n * window].reshape(n, window).mean(axis=1)


def costate_scale(config: TrainConfig, n_samples: int) -> float:
    """p^0 = (gamma / N) * pi^0, so the implied controls start O(init_scale)."""
    return float(config.gamma) / float(n_samples)


def initial_state(config: TrainConfig, n_samples: int, d: int, rng: np.random.Generator):
    """
    Seeded initial network state.

    Returns:
        Per-layer ControlParams (euler/rk4) or the (N, d) initial costates
        (symplectic)
    """
    kind = IntegratorKind.parse(config.integrator)
    if kind is IntegratorKind.SYMPLECTIC:
        return costate_scale(config, n_samples) * config.init_scale * rng.standard_normal((n_samples, d))
    return [ControlParams(config.init_scale * rng.standard_normal((d, d)),
                          config.init_scale * rng.standard_normal(d))
            for _ in range(config.n_layers)]


def train(config: TrainConfig, data: Dataset, test: Optional[Dataset] = None,
          net_state=None) -> RunLog:
    """
    Train a network by plain gradient descent.

    Euler/RK4 networks descend the mean regularised residual in the layer
    controls. The symplectic network descends the summed residual in the
    scaled costates pi^0 = (N / gamma) p^0, which moves the implied controls
    on the same scale as the explicit networks.

    Args:
        config: Training configuration
        data: Training split
        test: Optional held-out split evaluated at the end
        net_state: Starting state (seeded random state by default)

    Returns:
        RunLog with one residual/accuracy entry per iteration
    """
    kind = IntegratorKind.parse(config.integrator)
    inputs = np.asarray(data.inputs, dtype=np.float64)
    labels = np.asarray(data.labels)
    n, d = inputs.shape
    rng = np.random.default_rng(config.seed)
    state = initial_state(config, n, d, rng) if net_state is None else net_state

    log = RunLog()
    started = time.perf_counter()
    lr = float(config.learning_rate)
    kappa = costate_scale(config, n)

    for it in range(config.iterations):
        try:
            if kind is IntegratorKind.SYMPLECTIC:
                grad, traj = costate_gradient(config, state, inputs, labels)
                state = state - lr * kappa * kappa * grad
            else:
                grads, traj = parameter_gradient(config, state, inputs, labels)
                state = [ControlParams(th.u - (lr / n) * g.u, th.b - (lr / n) * g.b)
                         for th, g in zip(state, grads)]
        except ConvergenceError as exc:
            raise exc.at(it, "train_model.train") from None

        residual, accuracy = loss_and_accuracy(traj.final, labels, config.loss)
        log.residual.append(residual)
        log.accuracy.append(accuracy)
        if it % config.log_every == 0 or it == config.iterations - 1:
            logger.info(f"   iter {it:5d}  residual {residual:.6f}  accuracy {accuracy:.4f}")

    log.wall_clock = time.perf_counter() - started
    log.final_state = state
    log.final_controls = trained_controls(config, state, inputs)
    log.final_residual, log.final_accuracy = evaluate(config, log.final_controls, inputs, labels)
    if test is not None:
        log.test_residual, log.test_accuracy = evaluate(config, log.final_controls,
                                                        test.inputs, test.labels)
    return log


def snapshot_rows(trajectory: LayerTrajectory, labels: np.ndarray, layers) -> List[tuple]:
    """(layer, sample, x, y, label) rows for the requested layers."""
    rows = []
    for layer in layers:
        q = trajectory.q[layer]
        for i in range(q.shape[0]):
            rows.append((int(layer), i, float(q[i, 0]), float(q[i, 1]), int(labels[i])))
    return rows


def snapshot_layers(config: TrainConfig) -> List[int]:
    """Requested snapshot layers clipped to the network depth; the last layer is always kept."""
    layers = {k for k in config.snapshots if k <= config.n_layers}
    layers.add(config.n_layers)
    return sorted(layers)


class ResNetTrainer:
    """
    Trainer for the ResNet benchmarks.
    Generates the data, runs train() and writes the run artifacts.
    """

    def __init__(self, config: TrainConfig):
        """
        Initialize the trainer.

        Args:
            config: Validated training configuration
        """
        self.config = config
        self.train_data: Optional[Dataset] = None
        self.test_data: Optional[Dataset] = None
        self.log: Optional[RunLog] = None
        self.training_stats: Dict[str, object] = {}

    def load_and_prepare_data(self):
        """Generate the train and test splits."""
        cfg = self.config
        logger.info("=" * 60)
        logger.info("GEOFLOW RESNET TRAINING")
        logger.info("=" * 60)
        self.train_data, self.test_data = generate_splits(cfg.dataset, cfg.n_points, cfg.seed)
        n0, n1 = self.train_data.class_counts()
        logger.info(f"Dataset: {cfg.dataset}, {len(self.train_data)} train / "
                    f"{len(self.test_data)} test points (classes {n0}/{n1})")
        return self.train_data, self.test_data

    def train(self) -> RunLog:
        """Run gradient descent with the configured integrator."""
        if self.train_data is None:
            self.load_and_prepare_data()
        cfg = self.config
        logger.info("-" * 60)
        logger.info(f"Integrator {cfg.integrator}: {cfg.n_layers} layers, dt={cfg.dt}, "
                    f"gamma={cfg.gamma}, {cfg.iterations} iterations")
        logger.info("-" * 60)
        self.log = train(cfg, self.train_data, self.test_data)
        self.training_stats = {
            "iterations": len(self.log),
            "final_residual": self.log.final_residual,
            "final_accuracy": self.log.final_accuracy,
            "test_residual": self.log.test_residual,
            "test_accuracy": self.log.test_accuracy,
        }
        test_acc = "n/a" if self.log.test_accuracy is None else f"{self.log.test_accuracy:.4f}"
        logger.info(f"[OK] train accuracy {self.log.final_accuracy:.4f}, "
                    f"test accuracy {test_acc} ({self.log.wall_clock:.1f}s)")
        return self.log

    def save_run(self, run: RunArtifact) -> str:
        """
        Write the residual/accuracy table, layer snapshots and final state.

        Args:
            run: Run directory to write into

        Returns:
            Path to the joblib state file
        """
        if self.log is None:
            raise UsageError("train() must run before save_run()")
        logger.info("=" * 60)
        logger.info("SAVING RUN")
        logger.info("=" * 60)
        run.write_table("runlog.csv", self.log.rows(), RUNLOG_SCHEMA)

        trajectory = forward_pass(self.config, self.log.final_state, self.train_data.inputs,
                                  keep_costates=False)
        layers = snapshot_layers(self.config)
        for layer in layers:
            run.write_table(f"snapshot_layer{layer:03d}.csv",
                            snapshot_rows(trajectory, self.train_data.labels, [layer]),
                            SNAPSHOT_SCHEMA)
        run.write_document("summary.json", self.training_stats)

        state = self.log.final_state
        if isinstance(state, list):
            state = {"u": np.stack([th.u for th in state]), "b": np.stack([th.b for th in state])}
        return run.save_state({"integrator": self.config.integrator, "state": state,
                               "stats": self.training_stats})

    def train_and_save(self, run: RunArtifact) -> RunLog:
        """Complete training pipeline."""
        self.load_and_prepare_data()
        self.train()
        self.save_run(run)
        logger.info("[SUCCESS] TRAINING COMPLETE")
        return self.log


def load_trained_state(path: str):
    """
    Load a saved network state.

    Returns:
        Per-layer ControlParams (euler/rk4) or the (N, d) initial costates
    """
    saved = load_state(path)
    state = saved["state"]
    if isinstance(state, dict):
        return [ControlParams(u, b) for u, b in zip(state["u"], state["b"])]
    return state
