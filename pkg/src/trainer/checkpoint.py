"""
On-disk trained-model checkpoints.

A checkpoint directory holds manifest.json (genome, genome digest, training
config, iteration, metrics and the list of layer files) and one layer dump
per parameterized layer under layers/. The classifier head is stored as a
1x1x1 layer dump named "head".
"""
import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import List

from src.errors import ArchiveError
from src.kernels.dump import read_layer_dump, write_layer_dump
from src.kernels.layers import Conv1x1x1Layer
from src.search_space.codec import genome_digest, genome_from_dict, genome_to_dict
from src.trainer.network import build_network
from src.trainer.training import HistoryEntry, TrainConfig, TrainedModel

MANIFEST = "manifest.json"
HEAD = "head"


def save_checkpoint(model: TrainedModel, out_dir: Path) -> Path:
    """Writes the model to out_dir and returns the manifest path."""
    out_dir = Path(out_dir)
    layer_dir = out_dir / "layers"
    layer_dir.mkdir(parents=True, exist_ok=True)

    network = model.network
    layers = [(name, layer) for name, layer in network.named_layers() if layer.params]
    layers.append((HEAD, Conv1x1x1Layer(network.head_weight, network.head_bias)))
    entries = []
    for name, layer in layers:
        relative = f"layers/{name}.bin"
        write_layer_dump(out_dir / relative, layer)
        entries.append({"name": name, "kind": layer.kind.value, "file": relative})

    manifest = {
        "genome_digest": genome_digest(model.genome),
        "genome": genome_to_dict(model.genome),
        "num_classes": network.num_classes,
        "in_channels": network.in_channels,
        "config": asdict(model.config),
        "iteration": model.iteration,
        "metrics": model.metrics,
        "layers": entries,
    }
    path = out_dir / MANIFEST
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return path


def read_manifest(path: Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise ArchiveError(f"No checkpoint manifest at {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def load_checkpoint(path: Path) -> TrainedModel:
    """Rebuilds a trained model from a checkpoint directory or manifest path."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    manifest = read_manifest(path)
    genome = genome_from_dict(manifest["genome"])
    if genome_digest(genome) != manifest["genome_digest"]:
        raise ArchiveError(f"{root}: genome digest does not match the stored genome")
    config = TrainConfig(**manifest["config"])
    network = build_network(
        genome, manifest["num_classes"], config.seed, manifest["in_channels"], dtype=config.numpy_dtype
    )

    params = network.parameters()
    for entry in manifest["layers"]:
        _, tensors = read_layer_dump(root / entry["file"])
        for tensor_name, values in tensors.items():
            target = params.get(f"{entry['name']}.{tensor_name}")
            if target is None or target.shape != values.shape:
                raise ArchiveError(f"{root}: layer {entry['name']} tensor {tensor_name} does not fit the network")
            target[...] = values
    return TrainedModel(genome, network, config, manifest["iteration"], manifest["metrics"])


def write_history_csv(history: List[HistoryEntry], path: Path):
    """Writes iteration,loss,val_acc rows; val_acc is empty on iterations without evaluation."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss", "val_acc"])
        for entry in history:
            val_acc = "" if entry.val_acc is None else repr(float(entry.val_acc))
            writer.writerow([entry.iteration, repr(float(entry.loss)), val_acc])

