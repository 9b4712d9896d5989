"""
Command implementations behind evanet_cli.py.

Every command returns a process exit code: 0 on success, 1 when training
diverges, 2 for usage, configuration or genome errors, 3 for I/O and archive
errors. Each command that writes an output directory logs to
<out>/activity.jsonl.
"""
import argparse
import csv
import dataclasses
import io
import os
from pathlib import Path
from typing import Any, List, Optional

from src.calibration import schedule_sweep, summarize, training_sweep, write_rows_csv
from src.errors import ArchiveError, ConfigError, TrainingDivergedError
from src.evolution.archive import RunArchive, format_fitness, render_trace_csv
from src.evolution.population import replay_store, top_k
from src.evolution.search import EvolutionConfig, run_evolution, run_random_search
from src.kernels.dump import read_layer_dump
from src.kernels.tgm import TGMParams, build_gaussian_mixture_kernel, stretch_itgm
from src.logging import log_activity
from src.search_space.codec import parse_genome, serialize_genome
from src.search_space.counting import layer_statistics
from src.search_space.space import SPACE_TIME_CONV_KINDS
from src.trainer.checkpoint import load_checkpoint, read_manifest, save_checkpoint, write_history_csv
from src.trainer.ensemble import ensemble_accuracies
from src.trainer.fitness import get_evaluator
from src.trainer.toy_video import generate_toy_dataset
from src.trainer.training import accuracy, train_genome
from src.utils.config_loader import (
    RunConfig,
    load_json_file,
    load_run_config,
    parse_run_config,
    resolved_document,
)

WORKERS_ENV = "EVANET_WORKERS"
# Evolution keys with no meaning for random search.
MUTATION_KEYS = {"d", "r", "tournament_size", "schedule", "removal"}
STATISTIC_KINDS = [kind.value for kind in sorted(SPACE_TIME_CONV_KINDS, key=lambda k: k.value)]
# Round at which the schedule sweep also records best fitness.
EARLY_ROUND = 50

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def resolve_workers(flag: Optional[int]) -> int:
    """EVANET_WORKERS, when set, overrides --workers."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}")
    else:
        workers = flag if flag is not None else 1
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    return workers


def _output_dir(args: argparse.Namespace, run_config: Optional[RunConfig] = None) -> Path:
    out = getattr(args, "out", None) or (run_config.output_dir if run_config else None)
    if not out:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fail(log_file: Optional[Path], event_type: str, code: int, error: Exception) -> int:
    print(f"Error: {error}")
    log_activity(log_file, event_type, "FAILURE", str(error), {"exit_code": code})
    return code


def _random_search_document(document: Any) -> Any:
    """Rejects selection and mutation keys; the tournament size is pinned to P since no tournament runs."""
    evolution = document.get("evolution", {}) if isinstance(document, dict) else None
    if not isinstance(evolution, dict):
        return document
    requested = sorted(MUTATION_KEYS & set(evolution))
    if requested:
        raise ConfigError(f"random search does not use evolution key(s) {requested}")
    size = evolution.get("population_size", EvolutionConfig.population_size)
    return {**document, "evolution": {**evolution, "tournament_size": size}}


def _search(args: argparse.Namespace, random_search: bool) -> int:
    log_file = None
    label = "RANDOM_SEARCH" if random_search else "EVOLUTION"
    try:
        document = load_json_file(Path(args.config))
        if random_search:
            document = _random_search_document(document)
        run_config = parse_run_config(document)
        out = _output_dir(args, run_config)
        log_file = out / "activity.jsonl"
        evolution = run_config.evolution
        if args.seed is not None:
            evolution = dataclasses.replace(evolution, seed=args.seed)
        run_config = dataclasses.replace(run_config, evolution=evolution)
        workers = resolve_workers(args.workers)

        archive = RunArchive(out)
        archive.write_config(resolved_document(run_config))
        dataset = None
        if evolution.evaluator == "train":
            dataset = generate_toy_dataset(run_config.data, run_config.train.numpy_dtype)
        evaluator = get_evaluator(
            evolution.evaluator,
            evolution.meta,
            run_config.constraints,
            surrogate=run_config.surrogate,
            dataset=dataset,
            train_config=run_config.train,
            log_file=log_file,
        )
    except (ConfigError, ValueError) as e:
        return _fail(log_file, "CONFIG_ERROR", EXIT_CONFIG, e)
    except (OSError, ArchiveError) as e:
        return _fail(log_file, "IO_ERROR", EXIT_IO, e)

    log_activity(log_file, f"{label}_START", "INFO", f"Search started with {workers} worker(s).",
                 {"seed": evolution.seed, "rounds": evolution.rounds})
    search = run_random_search if random_search else run_evolution
    try:
        result = search(evolution, run_config.constraints, evaluator, archive, workers, log_file)
    except ConfigError as e:
        return _fail(log_file, "CONFIG_ERROR", EXIT_CONFIG, e)
    except (OSError, ArchiveError) as e:
        return _fail(log_file, "IO_ERROR", EXIT_IO, e)

    best = result.store.best()
    print(f"Best fitness {best.fitness.value:.4f} (individual {best.id}) after {len(result.history)} evaluations.")
    print(f"Archive written to {archive.directory}")
    log_activity(log_file, f"{label}_END", "SUCCESS", "Search finished.",
                 {"best_id": best.id, "best_fitness": best.fitness.value, "evaluations": len(result.history)})
    return EXIT_OK


def cmd_evolve(args: argparse.Namespace) -> int:
    return _search(args, random_search=False)


def cmd_random_search(args: argparse.Namespace) -> int:
    return _search(args, random_search=True)


def cmd_train(args: argparse.Namespace) -> int:
    log_file = None
    try:
        run_config = load_run_config(args.config)
        out = _output_dir(args, run_config)
        log_file = out / "activity.jsonl"
        with open(args.genome, "r", encoding="utf-8") as f:
            genome = parse_genome(f.read(), run_config.constraints)
        dataset = generate_toy_dataset(run_config.data, run_config.train.numpy_dtype)
        model, history = train_genome(genome, dataset, run_config.train, log_file)
        test_acc = accuracy(model.network, dataset.test)
        model.metrics["test_acc"] = test_acc
        save_checkpoint(model, out)
        write_history_csv(history, out / "history.csv")
    except TrainingDivergedError as e:
        return _fail(log_file, "TRAIN_DIVERGED", EXIT_DIVERGED, e)
    except (ConfigError, ValueError) as e:
        return _fail(log_file, "CONFIG_ERROR", EXIT_CONFIG, e)
    except (OSError, ArchiveError) as e:
        return _fail(log_file, "IO_ERROR", EXIT_IO, e)

    print(f"Validation accuracy: {model.metrics['val_acc']:.4f}")
    print(f"Test accuracy: {test_acc:.4f}")
    log_activity(log_file, "TRAIN_END", "SUCCESS", "Checkpoint and history written.", {"test_acc": test_acc})
    return EXIT_OK


def cmd_ensemble(args: argparse.Namespace) -> int:
    try:
        run_config = load_run_config(args.data_config)
        models = [load_checkpoint(Path(d)) for d in args.models]
        if args.top is not None:
            if args.top < 1:
                raise ConfigError(f"--top must be >= 1, got {args.top}")
            ranked = sorted(enumerate(models), key=lambda im: (-im[1].metrics.get("val_acc", 0.0), im[0]))
            models = [m for _, m in ranked[: args.top]]
        dataset = generate_toy_dataset(run_config.data, run_config.train.numpy_dtype)
        if any(m.num_classes != dataset.num_classes for m in models):
            raise ValueError("Checkpoint class count does not match the dataset.")
        scores = ensemble_accuracies(models, dataset.test.x, dataset.test.y)
    except (ConfigError, ValueError) as e:
        return _fail(None, "CONFIG_ERROR", EXIT_CONFIG, e)
    except (OSError, ArchiveError) as e:
        return _fail(None, "IO_ERROR", EXIT_IO, e)

    for i, score in enumerate(scores[:-1]):
        print(f"model {i + 1}: test accuracy {score:.4f}")
    print(f"ensemble of {len(models)}: test accuracy {scores[-1]:.4f}")
    return EXIT_OK


def top_models_csv(individuals) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = ["rank", "id", "fitness"]
    header += [f"{kind}_count" for kind in STATISTIC_KINDS] + ["space_time_layers"]
    header += [f"{kind}_mean_t" for kind in STATISTIC_KINDS]
    writer.writerow(header)
    for rank, individual in enumerate(individuals, start=1):
        stats = layer_statistics(individual.genome)
        row = [rank, individual.id, format_fitness(individual.fitness.value)]
        row += [stats[f"{kind}_count"] for kind in STATISTIC_KINDS] + [stats["space_time_layers"]]
        row += [f"{stats[f'{kind}_mean_t']:.3f}" for kind in STATISTIC_KINDS]
        writer.writerow(row)
    return buffer.getvalue()


def cmd_report(args: argparse.Namespace) -> int:
    """
    Writes the round-indexed trace CSV to --out, the layer statistics of the
    top-k genomes to <out stem>_top_models.csv, and each top genome to
    <out stem>_top<rank>.json.
    """
    try:
        archive = RunArchive(Path(args.archive))
        run_config = parse_run_config(archive.read_config())
        individuals = archive.read_individuals(repair=False)
        store = replay_store(individuals, run_config.evolution.population_size, run_config.evolution.removal)
        best = top_k(store.history(), args.top)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(render_trace_csv(store.trace()))
        with open(out.with_name(f"{out.stem}_top_models.csv"), "w", encoding="utf-8", newline="") as f:
            f.write(top_models_csv(best.individuals))
        for rank, individual in enumerate(best.individuals, start=1):
            with open(out.with_name(f"{out.stem}_top{rank}.json"), "w", encoding="utf-8") as f:
                f.write(serialize_genome(individual.genome))
    except (OSError, ArchiveError) as e:
        return _fail(None, "IO_ERROR", EXIT_IO, e)
    except (ConfigError, ValueError) as e:
        return _fail(None, "CONFIG_ERROR", EXIT_CONFIG, e)

    print(f"{store.rounds_completed} rounds, {len(individuals)} evaluations; trace written to {out}")
    if best.truncated:
        print(f"Only {len(best.individuals)} distinct genomes available (asked for {args.top}).")
    return EXIT_OK


def kernel_csv(kernel, label: str) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["kernel", "channel"] + [f"t{l}" for l in range(kernel.shape[1])])
    for channel, row in enumerate(kernel):
        writer.writerow([label, channel] + [repr(float(v)) for v in row])
    return buffer.getvalue()


def cmd_kernel_inspect(args: argparse.Namespace) -> int:
    """
    Prints the Cout x L temporal mixture kernel of a checkpointed iTGM layer
    as CSV and, with --stretch, the kernel re-instantiated at the new length
    as a second block after a blank line.
    """
    try:
        path = Path(args.checkpoint)
        root = path if path.is_dir() else path.parent
        manifest = read_manifest(path)
        entries = {entry["name"]: entry for entry in manifest["layers"]}
        if args.layer not in entries:
            raise ValueError(f"No layer named {args.layer!r} in the checkpoint.")
        header, tensors = read_layer_dump(root / entries[args.layer]["file"])
        if header["kind"] != "itgm":
            raise ValueError(f"Layer {args.layer!r} is a {header['kind']} layer, not an iTGM layer.")
        tgm = TGMParams(tensors["mu_hat"], tensors["sigma_hat"], tensors["a"], int(header["tgm"]["L"]))
        blocks: List[str] = [kernel_csv(build_gaussian_mixture_kernel(tgm), "original")]
        if args.stretch is not None:
            stretched = stretch_itgm(tgm, args.stretch)
            blocks.append(kernel_csv(build_gaussian_mixture_kernel(stretched), "stretched"))
    except (OSError, ArchiveError) as e:
        return _fail(None, "IO_ERROR", EXIT_IO, e)
    except (ConfigError, ValueError, KeyError) as e:
        return _fail(None, "CONFIG_ERROR", EXIT_CONFIG, e)

    print("\n".join(blocks), end="")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    """
    Runs a calibration sweep and writes <out>/<kind>_sweep.csv (one row per
    run) and <out>/<kind>_summary.csv (mean and median per group).
    """
    log_file = None
    try:
        run_config = load_run_config(args.config)
        out = _output_dir(args, run_config)
        log_file = out / "activity.jsonl"
        if args.seeds < 1:
            raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
        seeds = list(range(args.seeds))
        log_activity(log_file, "CALIBRATION_START", "INFO", f"{args.kind} sweep over {len(seeds)} seed(s).")
        if args.kind == "schedules":
            evolution = run_config.evolution
            checkpoints = sorted({min(EARLY_ROUND, evolution.rounds), evolution.rounds} - {0})
            if not checkpoints:
                raise ConfigError("the schedule sweep needs rounds >= 1")
            rows = schedule_sweep(evolution, run_config.constraints, run_config.surrogate, seeds, checkpoints,
                                  log_file=log_file)
            summary = summarize(rows, ["variant", "round"], "best_fitness")
        else:
            if not args.genome:
                raise ConfigError("the training sweep needs --genome")
            with open(args.genome, "r", encoding="utf-8") as f:
                genome = parse_genome(f.read(), run_config.constraints)
            dataset = generate_toy_dataset(run_config.data, run_config.train.numpy_dtype)
            rows = training_sweep(genome, dataset, run_config.train, args.learning_rates, seeds, log_file)
            summary = summarize(rows, ["learning_rate"], "val_acc")
        write_rows_csv(rows, out / f"{args.kind}_sweep.csv")
        write_rows_csv(summary, out / f"{args.kind}_summary.csv")
    except (ConfigError, ValueError) as e:
        return _fail(log_file, "CONFIG_ERROR", EXIT_CONFIG, e)
    except (OSError, ArchiveError) as e:
        return _fail(log_file, "IO_ERROR", EXIT_IO, e)

    for row in summary:
        groups = ", ".join(f"{k}={v}" for k, v in row.items() if k not in ("mean", "median", "runs"))
        print(f"{groups}: mean {row['mean']:.4f}, median {row['median']:.4f} over {row['runs']} run(s)")
    log_activity(log_file, "CALIBRATION_END", "SUCCESS", "Sweep written.", {"runs": len(rows)})
    return EXIT_OK
