"""
Fitness evaluation of genomes.

Two evaluators share the FitnessEvaluator interface:
  - "train": builds the genome's network, trains it on the toy dataset and
    reports validation accuracy.
  - "surrogate": scores the genome's similarity to a hidden target genome.
    It runs in microseconds, which makes statistically powered comparisons of
    search strategies possible without training.
"""
import abc
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.errors import ConfigError, TrainingDivergedError
from src.logging import log_activity
from src.search_space.codec import genome_digest
from src.search_space.sampler import sample_random_genome
from src.search_space.space import (
    META_LAYOUTS,
    Genome,
    LayerSpec,
    MetaKind,
    SearchConstraints,
    StreamSpec,
    is_pool,
    is_space_time_conv,
)
from src.trainer.toy_video import Dataset
from src.trainer.training import TrainConfig, accuracy, train_genome

SCORE_GROUPS = ("type", "kind", "temporal", "streams", "repeats")


@dataclass(frozen=True)
class Fitness:
    value: float
    evaluated_at: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        # wall_time stays out of archives so they are reproducible byte for byte.
        return {"value": self.value, "evaluated_at": self.evaluated_at}


ZERO_FITNESS = Fitness(0.0)


def fitness_train(
    genome: Genome, dataset: Dataset, config: TrainConfig, log_file: Optional[Path] = None
) -> Fitness:
    """Trains the genome for config.iterations and returns its validation accuracy."""
    start = time.time()
    model, _ = train_genome(genome, dataset, config, log_file)
    value = accuracy(model.network, dataset.val)
    return Fitness(value, config.iterations, time.time() - start)


# Stream-count changes add or drop whole streams; the heavier weight makes
# single-step climbs across them costly.
DEFAULT_WEIGHTS = {"type": 1.0, "kind": 1.0, "temporal": 1.0, "streams": 3.0, "repeats": 1.0}


@dataclass(frozen=True)
class SurrogateConfig:
    target_seed: int = 12345
    tolerance: int = 0
    noise: float = 0.0
    noise_seed: int = 0
    weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def validate(self):
        if self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"noise must be in [0, 1], got {self.noise}")
        unknown = set(self.weights) - set(SCORE_GROUPS)
        if unknown:
            raise ConfigError(f"unknown surrogate weight groups: {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("surrogate weights must be >= 0")


# One scored attribute: (weight group, score in [0, 1]).
Scores = List[Tuple[str, float]]


class SurrogateLandscape:
    """
    Deterministic similarity between a genome and a hidden target genome.

    Scored attributes of the target: stem temporal lengths; per module the
    stream count and (when the meta-architecture repeats modules) the repeat
    count; per target stream its type and the kind and temporal length of its
    space-time conv and pooling layers. Genome streams are matched to target
    streams by optimal assignment, so the score does not depend on stream
    order. The result is the weighted mean of attribute scores.
    """

    def __init__(
        self,
        target: Genome,
        constraints: SearchConstraints,
        tolerance: int = 0,
        noise: float = 0.0,
        noise_seed: int = 0,
        weights: Optional[Dict[str, float]] = None,
    ):
        self.target = target
        self.constraints = constraints
        self.tolerance = tolerance
        self.noise = noise
        self.noise_seed = noise_seed
        self.weights = {group: 1.0 for group in SCORE_GROUPS}
        self.weights.update(weights or {})
        lengths = sorted(constraints.allowed_temporal_lens)
        self._span = lengths[-1] - lengths[0]

    @classmethod
    def from_config(
        cls, config: SurrogateConfig, meta: MetaKind, constraints: SearchConstraints
    ) -> "SurrogateLandscape":
        """Landscape whose hidden target is a random genome drawn from config.target_seed."""
        config.validate()
        target = sample_random_genome(meta, constraints, config.target_seed)
        return cls(target, constraints, config.tolerance, config.noise, config.noise_seed, config.weights)

    def _temporal(self, a: int, b: int) -> float:
        delta = abs(a - b)
        if delta <= self.tolerance or self._span == 0:
            return 1.0
        return max(0.0, 1.0 - delta / self._span)

    @staticmethod
    def _closeness(a: int, b: int, span: int) -> float:
        if span <= 0:
            return 1.0 if a == b else 0.0
        return max(0.0, 1.0 - abs(a - b) / span)

    def _layer_scores(self, target: LayerSpec, layer: Optional[LayerSpec]) -> Scores:
        evolvable = lambda kind: is_space_time_conv(kind) or is_pool(kind)
        if not evolvable(target.kind):
            return []
        same_slot = layer is not None and evolvable(layer.kind) and is_pool(layer.kind) == is_pool(target.kind)
        kind = 1.0 if same_slot and layer.kind == target.kind else 0.0
        temporal = self._temporal(layer.temporal_len, target.temporal_len) if same_slot else 0.0
        return [("kind", kind), ("temporal", temporal)]

    def _stream_scores(self, target: StreamSpec, stream: Optional[StreamSpec]) -> Scores:
        scores: Scores = [("type", 1.0 if stream is not None and stream.stream_type == target.stream_type else 0.0)]
        for l, target_layer in enumerate(target.layers):
            layer = stream.layers[l] if stream is not None and l < len(stream.layers) else None
            scores.extend(self._layer_scores(target_layer, layer))
        return scores

    def _weighted_sum(self, scores: Scores) -> float:
        return sum(self.weights[group] * score for group, score in scores)

    def attribute_scores(self, genome: Genome) -> Scores:
        """Every scored attribute of the target with the genome's score on it."""
        if genome.meta != self.target.meta:
            raise ValueError(f"genome meta {genome.meta.value} does not match landscape meta {self.target.meta.value}")
        scores: Scores = []
        for target_layer, layer in zip(self.target.stem, genome.stem):
            if is_space_time_conv(target_layer.kind) or is_pool(target_layer.kind):
                scores.append(("temporal", self._temporal(layer.temporal_len, target_layer.temporal_len)))

        repeats_scored = META_LAYOUTS[self.target.meta].supports_repeats
        for target_module, module in zip(self.target.modules, genome.modules):
            scores.append((
                "streams",
                self._closeness(len(module.streams), len(target_module.streams), self.constraints.max_streams - 1),
            ))
            if repeats_scored:
                scores.append((
                    "repeats",
                    self._closeness(module.repeats, target_module.repeats, self.constraints.max_repeats - 1),
                ))
            targets, streams = target_module.streams, module.streams
            gain = np.array([
                [self._weighted_sum(self._stream_scores(t, s)) for s in streams] for t in targets
            ])
            rows, cols = linear_sum_assignment(gain, maximize=True)
            matched = dict(zip(rows.tolist(), cols.tolist()))
            for t, target_stream in enumerate(targets):
                stream = streams[matched[t]] if t in matched else None
                scores.extend(self._stream_scores(target_stream, stream))
        return scores

    def score(self, genome: Genome) -> float:
        scores = self.attribute_scores(genome)
        total_weight = sum(self.weights[group] for group, _ in scores)
        value = self._weighted_sum(scores) / total_weight if total_weight > 0 else 1.0
        if self.noise > 0:
            digest = int(genome_digest(genome)[:16], 16)
            rng = np.random.default_rng(np.random.SeedSequence([self.noise_seed, digest]))
            value += rng.uniform(-self.noise, self.noise)
        return float(np.clip(value, 0.0, 1.0))


def surrogate_fitness(genome: Genome, landscape: SurrogateLandscape) -> Fitness:
    start = time.time()
    value = landscape.score(genome)
    return Fitness(value, 0, time.time() - start)


class FitnessEvaluator(abc.ABC):
    """Abstract base class for genome fitness evaluators."""

    @abc.abstractmethod
    def evaluate(self, genome: Genome) -> Fitness:
        """Evaluates a genome; failures that are specific to the genome yield fitness 0."""
        pass


class SurrogateEvaluator(FitnessEvaluator):
    def __init__(self, landscape: SurrogateLandscape):
        self.landscape = landscape

    def evaluate(self, genome: Genome) -> Fitness:
        return surrogate_fitness(genome, self.landscape)


class TrainingEvaluator(FitnessEvaluator):
    """Trains every genome from scratch; a diverged run scores 0 instead of failing the search."""

    def __init__(self, dataset: Dataset, config: TrainConfig, log_file: Optional[Path] = None):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.log_file = log_file

    def evaluate(self, genome: Genome) -> Fitness:
        try:
            return fitness_train(genome, self.dataset, self.config, self.log_file)
        except TrainingDivergedError as e:
            log_activity(
                self.log_file,
                "FITNESS",
                "FAILURE",
                f"Training diverged; assigning fitness 0. Details: {e}",
                {"genome": genome_digest(genome), "iteration": e.iteration},
            )
            return Fitness(0.0, e.iteration)


def get_evaluator(
    kind: str,
    meta: MetaKind,
    constraints: SearchConstraints,
    surrogate: Optional[SurrogateConfig] = None,
    dataset: Optional[Dataset] = None,
    train_config: Optional[TrainConfig] = None,
    log_file: Optional[Path] = None,
) -> FitnessEvaluator:
    """Factory function to get the configured fitness evaluator."""
    kind = (kind or "").lower()
    if kind == "surrogate":
        return SurrogateEvaluator(SurrogateLandscape.from_config(surrogate or SurrogateConfig(), meta, constraints))
    elif kind == "train":
        if dataset is None:
            raise ConfigError("The 'train' evaluator needs a dataset.")
        return TrainingEvaluator(dataset, train_config or TrainConfig(), log_file)
    else:
        raise ConfigError(f"Unsupported evaluator: {kind}. Choose 'surrogate' or 'train'.")
