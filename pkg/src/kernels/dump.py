"""
Binary parameter dump of a single layer.

Layout: one UTF-8 JSON header line
    {"kind", "shape", "tensors": [{"name", "shape"}, ...], "tgm": {M, L, mu_hat, sigma_hat} | null}
followed by the float64 little-endian values of every tensor, in header order.
"""
import json
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from src.kernels.layers import ITGMLayer, Layer

LE_FLOAT64 = np.dtype("<f8")


def layer_dump_header(layer: Layer) -> Dict[str, Any]:
    tensors = [{"name": name, "shape": list(p.shape)} for name, p in layer.params.items()]
    tgm = None
    if isinstance(layer, ITGMLayer):
        tgm = {
            "M": layer.tgm.mixtures,
            "L": layer.tgm.length,
            "mu_hat": layer.tgm.mu_hat.astype(float).tolist(),
            "sigma_hat": layer.tgm.sigma_hat.astype(float).tolist(),
        }
    return {
        "kind": layer.kind.value,
        "shape": tensors[0]["shape"] if tensors else [],
        "tensors": tensors,
        "tgm": tgm,
    }


def write_layer_dump(path: Path, layer: Layer):
    header = layer_dump_header(layer)
    with open(path, "wb") as f:
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        for name in layer.params:
            f.write(np.ascontiguousarray(layer.params[name], dtype=LE_FLOAT64).tobytes())


def read_layer_dump(path: Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Returns (header, tensors by name) from a layer dump file."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    tensors: Dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(payload, dtype=LE_FLOAT64, count=count, offset=offset)
        tensors[entry["name"]] = values.reshape(shape).astype(np.float64)
        offset += count * LE_FLOAT64.itemsize
    if offset != len(payload):
        raise ValueError(f"{path}: payload size {len(payload)} does not match header ({offset} bytes)")
    return header, tensors
