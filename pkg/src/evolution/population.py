"""
Individuals and the fixed-capacity population shared by search workers.

The store guards its members with a re-entrant lock: readers take a
consistent snapshot, and a child's insertion together with the matching
eviction is one atomic commit. Callers that must persist a commit in the
same critical section hold `store.lock` around `commit` and their write.
"""
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.mutation import MutationRecord
from src.search_space.codec import genome_from_dict, genome_to_dict, serialize_genome
from src.search_space.space import Genome
from src.trainer.fitness import Fitness

REMOVAL_POLICIES = ("least_fit", "oldest")


@dataclass(frozen=True)
class Individual:
    id: int
    genome: Genome
    fitness: Fitness
    parent_id: Optional[int] = None
    birth_round: int = 0
    mutation_log: Tuple[MutationRecord, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "birth_round": self.birth_round,
            "fitness": self.fitness.to_dict(),
            "genome": genome_to_dict(self.genome),
            "mutation_log": [record.to_dict() for record in self.mutation_log],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Individual":
        fitness = data["fitness"]
        return cls(
            id=int(data["id"]),
            genome=genome_from_dict(data["genome"]),
            fitness=Fitness(float(fitness["value"]), int(fitness["evaluated_at"])),
            parent_id=data["parent_id"],
            birth_round=int(data["birth_round"]),
            mutation_log=tuple(MutationRecord.from_dict(r) for r in data["mutation_log"]),
        )


@dataclass(frozen=True)
class TraceRow:
    round: int
    best_fitness: float
    mean_fitness: float
    evaluations: int


def tournament_select(members: Sequence[Individual], tournament_size: int, rng: np.random.Generator) -> Individual:
    """
    Samples tournament_size distinct members uniformly and returns the fittest.

    Ties go to the larger id (the younger individual).
    """
    if not 1 < tournament_size <= len(members):
        raise ValueError(f"tournament size must be in (1, {len(members)}], got {tournament_size}")
    picks = rng.choice(len(members), size=tournament_size, replace=False)
    return max((members[int(i)] for i in picks), key=lambda ind: (ind.fitness.value, ind.id))


def eviction_candidate(members: Sequence[Individual], removal: str) -> Individual:
    if removal == "oldest":
        return min(members, key=lambda ind: ind.id)
    return min(members, key=lambda ind: (ind.fitness.value, ind.id))


class PopulationStore:
    """
    Fixed-size population plus the full history of every individual created.

    Attributes:
        capacity: Population size P restored after every commit.
        removal: Eviction policy, "least_fit" or "oldest".
        rounds_completed: Number of child commits so far.
    """

    def __init__(self, capacity: int, removal: str = "least_fit"):
        if capacity < 1:
            raise ValueError(f"population capacity must be >= 1, got {capacity}")
        if removal not in REMOVAL_POLICIES:
            raise ValueError(f"Unknown removal policy: {removal}. Choose 'least_fit' or 'oldest'.")
        self.capacity = capacity
        self.removal = removal
        self.rounds_completed = 0
        self.lock = threading.RLock()
        self._members: Dict[int, Individual] = {}
        self._history: List[Individual] = []
        self._trace: List[TraceRow] = []

    @property
    def next_id(self) -> int:
        return len(self._history)

    def snapshot(self) -> List[Individual]:
        """Current members ordered by id."""
        with self.lock:
            return [self._members[i] for i in sorted(self._members)]

    def history(self) -> List[Individual]:
        with self.lock:
            return list(self._history)

    def trace(self) -> List[TraceRow]:
        with self.lock:
            return list(self._trace)

    def __len__(self) -> int:
        with self.lock:
            return len(self._members)

    def best(self) -> Individual:
        with self.lock:
            return max(self._members.values(), key=lambda ind: (ind.fitness.value, ind.id))

    def add_initial(self, individual: Individual):
        with self.lock:
            if individual.id != self.next_id:
                raise ValueError(f"expected initial individual {self.next_id}, got id {individual.id}")
            if len(self._members) >= self.capacity:
                raise ValueError("population is already full")
            self._members[individual.id] = individual
            self._history.append(individual)

    def commit(
        self,
        genome: Genome,
        fitness: Fitness,
        parent_id: Optional[int],
        birth_round: int,
        mutation_log: Sequence[MutationRecord] = (),
    ) -> Tuple[Individual, int]:
        """
        Inserts a child under the next id and evicts one member per the removal policy.

        Returns:
            The inserted child and the id of the evicted individual.
        """
        with self.lock:
            if len(self._members) != self.capacity:
                raise ValueError(f"commit needs a full population ({len(self._members)}/{self.capacity})")
            child = Individual(self.next_id, genome, fitness, parent_id, birth_round, tuple(mutation_log))
            self._members[child.id] = child
            self._history.append(child)
            evicted = eviction_candidate(list(self._members.values()), self.removal)
            del self._members[evicted.id]
            self.rounds_completed += 1
            self._trace.append(self._trace_row())
            return child, evicted.id

    def _trace_row(self) -> TraceRow:
        values = [ind.fitness.value for ind in self._members.values()]
        return TraceRow(
            round=self.rounds_completed,
            best_fitness=max(values),
            mean_fitness=float(np.mean(values)),
            evaluations=len(self._history),
        )


def replay_store(individuals: Sequence[Individual], capacity: int, removal: str = "least_fit") -> PopulationStore:
    """
    Rebuilds a store from archived individuals in id order: the first
    `capacity` are the initial population, every later one is a committed child.
    """
    store = PopulationStore(capacity, removal)
    for individual in sorted(individuals, key=lambda ind: ind.id):
        if individual.id < capacity:
            store.add_initial(individual)
        else:
            child, _ = store.commit(
                individual.genome,
                individual.fitness,
                individual.parent_id,
                individual.birth_round,
                individual.mutation_log,
            )
            if child.id != individual.id:
                raise ValueError(f"archive ids are not contiguous at id {individual.id}")
    return store


@dataclass
class TopK:
    individuals: List[Individual] = field(default_factory=list)
    truncated: bool = False


def top_k(individuals: Sequence[Individual], k: int) -> TopK:
    """
    The k highest-fitness distinct genomes (ties by youth) from a run history.

    Genomes with identical serializations count once, represented by their
    best-ranked individual. `truncated` is set when fewer than k exist.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(individuals, key=lambda ind: (-ind.fitness.value, -ind.id))
    seen, chosen = set(), []
    for individual in ranked:
        key = serialize_genome(individual.genome)
        if key in seen:
            continue
        seen.add(key)
        chosen.append(individual)
        if len(chosen) == k:
            break
    return TopK(chosen, truncated=len(chosen) < k)
