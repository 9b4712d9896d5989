"""
Tournament-selection evolution over genomes, and the random-search baseline.

Each round selects a parent by tournament on a snapshot of the population,
mutates it a scheduled number of times, evaluates the child outside any
lock, then inserts the child and evicts one member in a single commit.

Random streams are derived from (seed, purpose, index), so a round's draws
depend only on its index and the population it sees. With one worker, a run
is fully deterministic and a resumed run matches an uninterrupted one.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.errors import ConfigError, MutationExhaustedError
from src.evolution.archive import RunArchive
from src.evolution.population import (
    REMOVAL_POLICIES,
    Individual,
    PopulationStore,
    TraceRow,
    replay_store,
    tournament_select,
)
from src.logging import log_activity
from src.mutation import MutationLog, apply_random_mutations, mutation_count_schedule
from src.search_space.sampler import sample_random_genome
from src.search_space.space import Genome, MetaKind, SearchConstraints
from src.trainer.fitness import ZERO_FITNESS, Fitness, FitnessEvaluator

STREAM_INIT = 0
STREAM_ROUND = 1
MAX_ROUND_RETRIES = 10
SCHEDULES = ("annealed", "constant")

Sampler = Callable[[np.random.Generator], Genome]


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 50
    tournament_size: int = 25
    rounds: int = 2000
    d: int = 7
    r: int = 100
    seed: int = 0
    evaluator: str = "surrogate"
    removal: str = "least_fit"
    schedule: str = "annealed"
    meta: MetaKind = MetaKind.TOY
    channel_scale: Optional[float] = None

    def validate(self):
        if self.population_size < 2:
            raise ConfigError(f"population_size must be >= 2, got {self.population_size}")
        if not 1 < self.tournament_size <= self.population_size:
            raise ConfigError(
                f"tournament_size must satisfy 1 < S <= P (P={self.population_size}), got {self.tournament_size}"
            )
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.d < 1 or self.r < 1:
            raise ConfigError(f"d and r must be >= 1, got d={self.d}, r={self.r}")
        if self.removal not in REMOVAL_POLICIES:
            raise ConfigError(f"Unknown removal policy: {self.removal}. Choose 'least_fit' or 'oldest'.")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"Unknown schedule: {self.schedule}. Choose 'annealed' or 'constant'.")
        if self.channel_scale is not None and not (math.isfinite(self.channel_scale) and self.channel_scale > 0):
            raise ConfigError(f"channel_scale must be finite and > 0, got {self.channel_scale}")

    def mutation_count(self, round_index: int) -> int:
        if self.schedule == "constant":
            return self.d
        return mutation_count_schedule(round_index, self.d, self.r)


@dataclass
class RoundResult:
    child: Individual
    evicted_id: int


@dataclass
class EvolutionResult:
    store: PopulationStore
    history: List[Individual]
    trace: List[TraceRow]


def stream_rng(seed: int, purpose: int, *index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, *index]))


def make_sampler(config: EvolutionConfig, constraints: SearchConstraints) -> Sampler:
    return lambda rng: sample_random_genome(config.meta, constraints, rng, config.channel_scale)


def _safe_evaluate(evaluator: FitnessEvaluator, genome: Genome, log_file: Optional[Path]) -> Fitness:
    try:
        return evaluator.evaluate(genome)
    except (ValueError, RuntimeError) as e:
        log_activity(log_file, "FITNESS", "FAILURE", f"Evaluation failed; assigning fitness 0. Details: {e}")
        return ZERO_FITNESS


def init_population(
    config: EvolutionConfig,
    sampler: Sampler,
    evaluator: FitnessEvaluator,
    store: Optional[PopulationStore] = None,
    archive: Optional[RunArchive] = None,
    workers: int = 1,
    log_file: Optional[Path] = None,
) -> PopulationStore:
    """
    Fills the store up to P randomly sampled, evaluated individuals.

    Individual k is sampled from its own random stream, so a partially
    initialized store (from a resumed archive) is completed identically.
    """
    config.validate()
    if store is None:
        store = PopulationStore(config.population_size, config.removal)
    start = store.next_id
    genomes = [sampler(stream_rng(config.seed, STREAM_INIT, k)) for k in range(start, config.population_size)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        fitnesses = list(executor.map(lambda g: _safe_evaluate(evaluator, g, log_file), genomes))

    for k, (genome, fitness) in enumerate(zip(genomes, fitnesses), start=start):
        individual = Individual(k, genome, fitness)
        with store.lock:
            store.add_initial(individual)
            if archive is not None:
                archive.append(individual)
    if genomes:
        log_activity(
            log_file,
            "POPULATION_INIT",
            "SUCCESS",
            f"Initialized {len(genomes)} individuals.",
            {"best_fitness": store.best().fitness.value},
        )
    return store


def breed_child(
    store: PopulationStore,
    config: EvolutionConfig,
    constraints: SearchConstraints,
    round_index: int,
    log_file: Optional[Path] = None,
) -> Tuple[Individual, Genome, MutationLog]:
    """
    Selects a parent by tournament and mutates it.

    Exhausted mutation attempts are retried with a fresh random stream, at
    most MAX_ROUND_RETRIES times.
    """
    count = config.mutation_count(round_index)
    for attempt in range(MAX_ROUND_RETRIES + 1):
        rng = stream_rng(config.seed, STREAM_ROUND, round_index, attempt)
        parent = tournament_select(store.snapshot(), config.tournament_size, rng)
        try:
            child, log = apply_random_mutations(parent.genome, count, constraints, rng)
            return parent, child, log
        except MutationExhaustedError as e:
            log_activity(
                log_file,
                "EVOLUTION_ROUND",
                "FAILURE",
                f"Round {round_index}: mutation attempt {attempt} exhausted; retrying. Details: {e}",
                {"round": round_index, "attempt": attempt},
            )
    raise MutationExhaustedError(f"round {round_index}: {MAX_ROUND_RETRIES} retries exhausted")


def _commit(
    store: PopulationStore,
    genome: Genome,
    fitness: Fitness,
    parent_id: Optional[int],
    round_index: int,
    log: MutationLog,
    archive: Optional[RunArchive],
) -> RoundResult:
    with store.lock:
        child, evicted = store.commit(genome, fitness, parent_id, round_index + 1, log)
        if archive is not None:
            archive.append(child)
    return RoundResult(child, evicted)


def evolution_round(
    store: PopulationStore,
    config: EvolutionConfig,
    constraints: SearchConstraints,
    evaluator: FitnessEvaluator,
    round_index: int,
    archive: Optional[RunArchive] = None,
    log_file: Optional[Path] = None,
) -> RoundResult:
    """Runs one select, mutate, evaluate, insert and evict round."""
    parent, child, log = breed_child(store, config, constraints, round_index, log_file)
    fitness = _safe_evaluate(evaluator, child, log_file)
    return _commit(store, child, fitness, parent.id, round_index, log, archive)


def random_search_round(
    store: PopulationStore,
    config: EvolutionConfig,
    sampler: Sampler,
    evaluator: FitnessEvaluator,
    round_index: int,
    archive: Optional[RunArchive] = None,
    log_file: Optional[Path] = None,
) -> RoundResult:
    """Evaluates a freshly sampled genome and lets it compete for a place in the population."""
    genome = sampler(stream_rng(config.seed, STREAM_ROUND, round_index))
    fitness = _safe_evaluate(evaluator, genome, log_file)
    return _commit(store, genome, fitness, None, round_index, [], archive)


def _resume(config: EvolutionConfig, archive: Optional[RunArchive], removal: str) -> PopulationStore:
    if archive is None or not archive.exists():
        return PopulationStore(config.population_size, removal)
    individuals = archive.read_individuals()
    return replay_store(individuals, config.population_size, removal)


def _run(
    config: EvolutionConfig,
    sampler: Sampler,
    evaluator: FitnessEvaluator,
    round_fn: Callable[[int], RoundResult],
    store: PopulationStore,
    archive: Optional[RunArchive],
    workers: int,
    log_file: Optional[Path],
    label: str,
) -> EvolutionResult:
    init_population(config, sampler, evaluator, store, archive, workers, log_file)
    first = store.rounds_completed
    if first < config.rounds:
        print(f"--- {label}: rounds {first + 1}..{config.rounds} with {workers} worker(s) ---")

    def report(result: RoundResult):
        round_number = store.rounds_completed
        if round_number % 50 == 0 or round_number == config.rounds:
            best = store.best()
            print(f"  round {round_number}: best fitness {best.fitness.value:.4f} (id {best.id})")
        log_activity(
            log_file,
            "EVOLUTION_ROUND",
            "SUCCESS",
            f"Committed child {result.child.id}, evicted {result.evicted_id}.",
            {
                "round": result.child.birth_round,
                "child_id": result.child.id,
                "parent_id": result.child.parent_id,
                "fitness": result.child.fitness.value,
                "evicted_id": result.evicted_id,
            },
        )

    if workers <= 1:
        for round_index in range(first, config.rounds):
            report(round_fn(round_index))
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(round_fn, i) for i in range(first, config.rounds)]
            for future in futures:
                report(future.result())

    if archive is not None:
        archive.write_trace(store.trace())
    return EvolutionResult(store, store.history(), store.trace())


def run_evolution(
    config: EvolutionConfig,
    constraints: SearchConstraints,
    evaluator: FitnessEvaluator,
    archive: Optional[RunArchive] = None,
    workers: int = 1,
    log_file: Optional[Path] = None,
) -> EvolutionResult:
    """
    Runs config.rounds evolution rounds after initializing the population.

    If the archive already holds individuals, the population is rebuilt from
    them and the run continues from the last committed round.

    Args:
        config: Search configuration (P, S, rounds, schedule, removal, seed).
        constraints: Search-space bounds for sampling and mutation.
        evaluator: Fitness evaluator shared by all workers.
        archive: Optional run archive to append individuals to.
        workers: Number of concurrent rounds.
        log_file: Activity log path, or None.

    Returns:
        The final store, the full history and the per-round trace.
    """
    config.validate()
    store = _resume(config, archive, config.removal)
    sampler = make_sampler(config, constraints)
    round_fn = lambda i: evolution_round(store, config, constraints, evaluator, i, archive, log_file)
    return _run(config, sampler, evaluator, round_fn, store, archive, workers, log_file, "Evolution")


def run_random_search(
    config: EvolutionConfig,
    constraints: SearchConstraints,
    evaluator: FitnessEvaluator,
    archive: Optional[RunArchive] = None,
    workers: int = 1,
    log_file: Optional[Path] = None,
) -> EvolutionResult:
    """
    Random-search baseline with the same budget as run_evolution: one fresh
    random genome per round, inserted with least-fit eviction.
    """
    config.validate()
    store = _resume(config, archive, "least_fit")
    sampler = make_sampler(config, constraints)
    round_fn = lambda i: random_search_round(store, config, sampler, evaluator, i, archive, log_file)
    return _run(config, sampler, evaluator, round_fn, store, archive, workers, log_file, "Random search")
