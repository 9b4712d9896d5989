"""
Command-line entry point: architecture search, training, ensembling and reports.

Usage examples:
    python evanet_cli.py evolve --config config/evolution_surrogate.json --out runs/evo
    python evanet_cli.py random-search --config config/random_search_surrogate.json --out runs/rand
    python evanet_cli.py report --archive runs/evo --out runs/evo_report.csv
    python evanet_cli.py train --genome runs/evo_report_top1.json --config config/train_toy.json --out runs/model1
    python evanet_cli.py ensemble --models runs/model1 runs/model2 --data-config config/train_toy.json
    python evanet_cli.py kernel-inspect --checkpoint runs/model1 --layer modules.0.repeat.0.stream.1.layer.1 --stretch 11
    python evanet_cli.py calibrate --kind schedules --config config/evolution_surrogate.json --seeds 20 --out runs/cal
"""
import argparse
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.commands import (
    cmd_calibrate,
    cmd_ensemble,
    cmd_evolve,
    cmd_kernel_inspect,
    cmd_random_search,
    cmd_report,
    cmd_train,
)

load_dotenv()  # Load EVANET_WORKERS and friends from .env if present

TRACE_HELP = "trace CSV columns: round,best_fitness,mean_fitness,evaluations"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evanet_cli.py",
        description="Evolve video classification architectures and work with the results.",
        epilog="Exit codes: 0 ok, 1 training diverged, 2 usage/config error, 3 I/O error.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for name, func, help_text in (
        ("evolve", cmd_evolve, "run tournament-selection evolution"),
        ("random-search", cmd_random_search, "run the random-search baseline"),
    ):
        sub = commands.add_parser(
            name,
            help=help_text,
            description=f"{help_text}; writes population.jsonl, trace.csv and config.json. {TRACE_HELP}",
        )
        sub.add_argument("--config", required=True, help="run configuration JSON file")
        sub.add_argument("--out", help="archive directory (defaults to output_dir from the config)")
        sub.add_argument("--workers", type=int, help="concurrent rounds; EVANET_WORKERS overrides")
        sub.add_argument("--seed", type=int, help="override evolution.seed")
        sub.set_defaults(func=func)

    train = commands.add_parser(
        "train",
        help="train one genome",
        description="Train a genome; writes manifest.json, layers/ and history.csv (iteration,loss,val_acc).",
    )
    train.add_argument("--genome", required=True, help="genome JSON file")
    train.add_argument("--config", required=True, help="run configuration JSON file (train and data sections)")
    train.add_argument("--out", help="checkpoint directory")
    train.set_defaults(func=cmd_train)

    ensemble = commands.add_parser("ensemble", help="evaluate checkpoints and their softmax-average ensemble")
    ensemble.add_argument("--models", nargs="+", required=True, help="checkpoint directories")
    ensemble.add_argument("--data-config", required=True, help="run configuration JSON file (data section)")
    ensemble.add_argument("--top", type=int, help="keep the K checkpoints with the best validation accuracy")
    ensemble.set_defaults(func=cmd_ensemble)

    report = commands.add_parser(
        "report",
        help="emit search trace and top-model statistics",
        description=(
            f"Replay an archive. {TRACE_HELP}. Top-model CSV columns: rank,id,fitness, per-kind layer "
            "counts, space_time_layers, per-kind mean temporal length."
        ),
    )
    report.add_argument("--archive", required=True, help="run archive directory")
    report.add_argument("--out", required=True, help="trace CSV path")
    report.add_argument("--top", type=int, default=3, help="number of top genomes to describe")
    report.set_defaults(func=cmd_report)

    inspect = commands.add_parser(
        "kernel-inspect",
        help="print iTGM temporal kernels as CSV",
        description="CSV columns: kernel,channel,t0..t{L-1}; a stretched block follows when --stretch is given.",
    )
    inspect.add_argument("--checkpoint", required=True, help="checkpoint directory or manifest.json")
    inspect.add_argument("--layer", required=True, help="layer name, e.g. modules.0.repeat.0.stream.1.layer.1")
    inspect.add_argument("--stretch", type=int, help="re-instantiate the kernel at this temporal length")
    inspect.set_defaults(func=cmd_kernel_inspect)

    calibrate = commands.add_parser(
        "calibrate",
        help="run a calibration sweep",
        description=(
            "schedules: best surrogate fitness per mutation schedule (annealed, constant-1, constant-3) at round 50 "
            "and the last round. training: validation accuracy per learning rate. Writes <kind>_sweep.csv and "
            "<kind>_summary.csv (mean, median, runs per group)."
        ),
    )
    calibrate.add_argument("--kind", choices=["schedules", "training"], required=True, help="sweep to run")
    calibrate.add_argument("--config", required=True, help="run configuration JSON file")
    calibrate.add_argument("--out", help="output directory (defaults to output_dir from the config)")
    calibrate.add_argument("--seeds", type=int, default=5, help="seeds 0..N-1 per group")
    calibrate.add_argument("--genome", help="genome JSON file (training sweep)")
    calibrate.add_argument(
        "--learning-rates", type=float, nargs="+", default=[0.003, 0.01, 0.03], help="training sweep grid"
    )
    calibrate.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
