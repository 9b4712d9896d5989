"""
Minibatch SGD with momentum on softmax cross-entropy.

Updates are applied in place on the network's parameter arrays, one
iteration at a time, so training is deterministic given the config seed.
"""
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.errors import ConfigError, TrainingDivergedError
from src.logging import log_activity
from src.search_space.space import Genome
from src.trainer.network import Network, build_network
from src.trainer.toy_video import Dataset, Split

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 100
    dtype: str = "float32"

    def validate(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]


@dataclass
class HistoryEntry:
    iteration: int
    loss: float
    val_acc: Optional[float] = None


@dataclass
class TrainedModel:
    genome: Genome
    network: Network
    config: TrainConfig
    iteration: int
    metrics: Dict[str, float]

    @property
    def num_classes(self) -> int:
        return self.network.num_classes

    def predict_proba(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        return self.network.predict_proba(x, batch_size)


def accuracy(network: Network, split: Split, batch_size: int = 32) -> float:
    """Fraction of examples whose arg-max prediction equals the label (ties go to the lowest class)."""
    probs = network.predict_proba(split.x, batch_size)
    return float(np.mean(np.argmax(probs, axis=1) == split.y))


def _snapshot(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: p.copy() for name, p in params.items()}


def train(
    network: Network,
    dataset: Dataset,
    config: TrainConfig,
    log_file: Optional[Path] = None,
) -> Tuple[TrainedModel, List[HistoryEntry]]:
    """
    Trains a network for config.iterations minibatch steps.

    Validation accuracy is measured every config.eval_every iterations and
    after the last one.

    Returns:
        The trained model (final weights, validation accuracy in metrics) and
        the per-iteration history.

    Raises:
        ConfigError: If the config is invalid.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    config.validate()
    params = network.parameters()
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    n = len(dataset.train)
    batch = min(config.batch_size, n)

    history: List[HistoryEntry] = []
    last_finite: Dict[str, np.ndarray] = _snapshot(params)
    last_finite_iteration = 0
    val_acc = 0.0
    start = time.time()

    for iteration in range(1, config.iterations + 1):
        index = np.sort(rng.choice(n, size=batch, replace=False))
        loss, grads = network.loss_and_grads(dataset.train.x[index], dataset.train.y[index])
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            log_activity(
                log_file,
                "TRAIN_DIVERGED",
                "FAILURE",
                f"Loss became non-finite at iteration {iteration}.",
                {"iteration": iteration, "last_finite_iteration": last_finite_iteration},
            )
            raise TrainingDivergedError(iteration, last_finite_iteration, last_finite)
        last_finite, last_finite_iteration = _snapshot(params), iteration

        for name, p in params.items():
            v = velocity[name]
            v *= config.momentum
            v -= config.learning_rate * grads[name]
            p += v

        entry = HistoryEntry(iteration, loss)
        if iteration % config.eval_every == 0 or iteration == config.iterations:
            val_acc = accuracy(network, dataset.val)
            entry.val_acc = val_acc
        history.append(entry)

    metrics = {"val_acc": val_acc, "final_loss": history[-1].loss, "wall_time": time.time() - start}
    log_activity(
        log_file,
        "TRAIN",
        "SUCCESS",
        f"Trained for {config.iterations} iterations, val accuracy {val_acc:.4f}.",
        {"config": asdict(config), "val_acc": val_acc},
    )
    return TrainedModel(network.genome, network, config, config.iterations, metrics), history


def train_genome(
    genome: Genome, dataset: Dataset, config: TrainConfig, log_file: Optional[Path] = None
) -> Tuple[TrainedModel, List[HistoryEntry]]:
    """Builds the genome's network (initialized from config.seed) and trains it."""
    config.validate()
    network = build_network(
        genome,
        dataset.num_classes,
        config.seed,
        in_channels=dataset.input_shape[-1],
        dtype=config.numpy_dtype,
    )
    return train(network, dataset, config, log_file)

