"""
Calibration sweeps behind the frozen defaults.

schedule_sweep runs evolution on the surrogate landscape once per mutation
schedule variant and seed and records the best fitness at chosen rounds.
training_sweep trains one genome per (learning rate, seed) and records its
validation accuracy. Both return flat rows for CSV output.
"""
import csv
import dataclasses
import statistics
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.errors import TrainingDivergedError
from src.evolution.search import EvolutionConfig, run_evolution
from src.logging import log_activity
from src.search_space.space import Genome, SearchConstraints
from src.trainer.fitness import SurrogateConfig, get_evaluator
from src.trainer.toy_video import Dataset
from src.trainer.training import TrainConfig, train_genome

SCHEDULE_VARIANTS: Dict[str, Dict[str, Any]] = {
    "annealed": {"schedule": "annealed"},
    "constant-1": {"schedule": "constant", "d": 1},
    "constant-3": {"schedule": "constant", "d": 3},
}

Row = Dict[str, Any]


def schedule_sweep(
    config: EvolutionConfig,
    constraints: SearchConstraints,
    surrogate: SurrogateConfig,
    seeds: Sequence[int],
    checkpoints: Sequence[int],
    variants: Optional[Sequence[str]] = None,
    log_file: Optional[Path] = None,
) -> List[Row]:
    """One row per (variant, seed, checkpoint round): the best fitness after that round."""
    rows: List[Row] = []
    for name in variants or list(SCHEDULE_VARIANTS):
        variant = dataclasses.replace(config, **SCHEDULE_VARIANTS[name])
        for seed in seeds:
            evaluator = get_evaluator("surrogate", config.meta, constraints, surrogate=surrogate)
            result = run_evolution(dataclasses.replace(variant, seed=seed), constraints, evaluator)
            for round_number in checkpoints:
                best = result.trace[round_number - 1].best_fitness
                rows.append({"variant": name, "seed": seed, "round": round_number, "best_fitness": best})
        log_activity(log_file, "CALIBRATION", "INFO", f"Schedule variant {name} done.", {"seeds": len(seeds)})
    return rows


def training_sweep(
    genome: Genome,
    dataset: Dataset,
    config: TrainConfig,
    learning_rates: Sequence[float],
    seeds: Sequence[int],
    log_file: Optional[Path] = None,
) -> List[Row]:
    """One row per (learning_rate, seed). Diverged runs are kept with val_acc 0."""
    rows: List[Row] = []
    for learning_rate in learning_rates:
        for seed in seeds:
            run = dataclasses.replace(config, learning_rate=learning_rate, seed=seed)
            try:
                model, _ = train_genome(genome, dataset, run, log_file)
                row = {"val_acc": model.metrics["val_acc"], "final_loss": model.metrics["final_loss"], "diverged": 0}
            except TrainingDivergedError as e:
                print(f"  lr={learning_rate} seed={seed}: diverged at iteration {e.iteration}")
                row = {"val_acc": 0.0, "final_loss": float("nan"), "diverged": 1}
            rows.append({"learning_rate": learning_rate, "seed": seed, **row})
            print(f"  lr={learning_rate} seed={seed}: val accuracy {row['val_acc']:.4f}")
    return rows


def summarize(rows: Sequence[Row], group_keys: Sequence[str], value_key: str) -> List[Row]:
    """Mean and median of value_key per group, in first-seen group order."""
    groups: Dict[tuple, List[float]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in group_keys), []).append(row[value_key])
    return [
        {**dict(zip(group_keys, key)), "mean": statistics.fmean(values), "median": statistics.median(values),
         "runs": len(values)}
        for key, values in groups.items()
    ]


def write_rows_csv(rows: Sequence[Row], path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
