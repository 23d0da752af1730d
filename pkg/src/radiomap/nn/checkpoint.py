"""Versioned binary checkpoints with a JSON metadata sidecar."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from radiomap.nn.autodiff import Tensor
from radiomap.nn.gat import ACTIVATIONS, GatLayerParams, GatModel

MAGIC = b"GATCKPT"
VERSION = 2


def save_checkpoint(model: GatModel, path, metadata: dict | None = None) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        fh.write(struct.pack("<I", len(model.layers)))
        for layer in model.layers:
            fh.write(struct.pack("<IIdB", layer.in_dim, layer.out_dim, layer.leaky_slope,
                                 ACTIVATIONS.index(layer.activation)))
        for layer in model.layers:
            fh.write(np.ascontiguousarray(layer.weight.data, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.attention_vec.data, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.bias.data, dtype="<f8").tobytes())
    meta = {"format_version": VERSION, **(metadata or {})}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[GatModel, dict]:
    path = Path(path)
    data = path.read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version = data[len(MAGIC)]
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = len(MAGIC) + 1
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    specs = []
    for _ in range(n_layers):
        specs.append(struct.unpack_from("<IIdB", data, off))
        off += struct.calcsize("<IIdB")
    layers = []
    for in_dim, out_dim, slope, act in specs:
        w = np.frombuffer(data, "<f8", in_dim * out_dim, off).reshape(in_dim, out_dim).copy()
        off += 8 * in_dim * out_dim
        a = np.frombuffer(data, "<f8", 2 * out_dim, off).copy()
        off += 16 * out_dim
        b = np.frombuffer(data, "<f8", out_dim, off).copy()
        off += 8 * out_dim
        layers.append(GatLayerParams(Tensor(w, requires_grad=True), Tensor(a, requires_grad=True),
                                     slope, ACTIVATIONS[act], Tensor(b, requires_grad=True)))
    sidecar = Path(str(path) + ".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return GatModel(layers), meta
