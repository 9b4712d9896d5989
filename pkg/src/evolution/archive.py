"""
Run archive directory of a search.

    population.jsonl  one Individual per line, in id order, append-only
    trace.csv         round,best_fitness,mean_fitness,evaluations
    config.json       the fully resolved run configuration

Each individual is written with a single write call followed by a flush
and fsync, so an interrupted run leaves at most one torn trailing line.
Reading discards such a line and truncates it away before new appends.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Sequence

from src.errors import ArchiveError
from src.evolution.population import Individual, TraceRow

POPULATION = "population.jsonl"
TRACE = "trace.csv"
CONFIG = "config.json"
TRACE_HEADER = ["round", "best_fitness", "mean_fitness", "evaluations"]


def format_fitness(value: float) -> str:
    return f"{value:.6f}"


class RunArchive:
    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.population_path = self.directory / POPULATION
        self.trace_path = self.directory / TRACE
        self.config_path = self.directory / CONFIG

    def exists(self) -> bool:
        return self.population_path.exists()

    def write_config(self, document: Dict[str, Any]):
        """Stores the resolved config; an existing archive must have been created with the same one."""
        self.directory.mkdir(parents=True, exist_ok=True)
        if self.config_path.exists():
            with open(self.config_path, "r", encoding="utf-8") as f:
                stored = json.load(f)
            if stored != document:
                raise ArchiveError(
                    f"{self.directory} holds a run with a different configuration; use a fresh output directory."
                )
            return
        self._replace(self.config_path, json.dumps(document, indent=2, sort_keys=True) + "\n")

    def read_config(self) -> Dict[str, Any]:
        if not self.config_path.exists():
            raise ArchiveError(f"No {CONFIG} in {self.directory}")
        with open(self.config_path, "r", encoding="utf-8") as f:
            return json.load(f)

    def append(self, individual: Individual):
        self.directory.mkdir(parents=True, exist_ok=True)
        line = json.dumps(individual.to_dict(), sort_keys=True) + "\n"
        with open(self.population_path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())

    def read_individuals(self, repair: bool = True) -> List[Individual]:
        """
        Parses population.jsonl. A torn last line is dropped (and, with
        repair, truncated from the file); damage anywhere else raises ArchiveError.
        """
        if not self.exists():
            raise ArchiveError(f"No {POPULATION} in {self.directory}")
        with open(self.population_path, "rb") as f:
            data = f.read()

        individuals: List[Individual] = []
        good_bytes = 0
        lines = data.split(b"\n")
        for number, raw in enumerate(lines, start=1):
            is_last = number == len(lines)
            if not raw:
                good_bytes += 0 if is_last else 1
                continue
            try:
                individuals.append(Individual.from_dict(json.loads(raw.decode("utf-8"))))
            except (ValueError, KeyError, TypeError) as e:
                if is_last:
                    break
                raise ArchiveError(f"{self.population_path}: line {number} is corrupt ({e})")
            if is_last:
                # Complete JSON without its newline is still a torn write.
                individuals.pop()
                break
            good_bytes += len(raw) + 1

        if repair and good_bytes != len(data):
            with open(self.population_path, "r+b") as f:
                f.truncate(good_bytes)
        for expected, individual in enumerate(individuals):
            if individual.id != expected:
                raise ArchiveError(f"{self.population_path}: expected id {expected}, found {individual.id}")
        return individuals

    def write_trace(self, rows: Sequence[TraceRow]):
        self._replace(self.trace_path, render_trace_csv(rows))

    def _replace(self, path: Path, text: str):
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)


def render_trace_csv(rows: Sequence[TraceRow]) -> str:
    lines = [",".join(TRACE_HEADER)]
    for row in rows:
        lines.append(
            f"{row.round},{format_fitness(row.best_fitness)},{format_fitness(row.mean_fitness)},{row.evaluations}"
        )
    return "\n".join(lines) + "\n"

