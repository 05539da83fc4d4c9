"""JSON checkpoints for networks.

Format (version 1)::

    {"version": 1, "kind": "mlp", "dims": [...], "activations": [...],
     "weights": [[row-major floats], ...], "biases": [[...], ...],
     "ema": {"decay": 0.999, "shadow": [[...], ...]}}   # ema optional

Floats are written with ``repr``, which round-trips float64 exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from lsdm.nn.network import Network
from lsdm.nn.optim import EmaState
from lsdm.nn.autograd import Tensor

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    def __init__(self, found, expected=FORMAT_VERSION):
        super().__init__(f"checkpoint version {found} cannot be read by version-{expected} reader")
        self.found = found
        self.expected = expected


class ShapeMismatchError(CheckpointError):
    pass


def _floats(a) -> list:
    out = np.asarray(a, dtype=np.float64).ravel().tolist()
    if not all(math.isfinite(v) for v in out):
        raise ValueError("refusing to serialize non-finite values")
    return out


def network_to_dict(net: Network, kind="mlp", ema: EmaState | None = None, **extra) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "dims": list(net.dims),
        "activations": list(net.activations),
        "weights": [_floats(w.data) for w in net.weights],
        "biases": [_floats(b.data) for b in net.biases],
    }
    if ema is not None:
        doc["ema"] = {"decay": ema.decay, "shadow": [_floats(s) for s in ema.shadow]}
    doc.update(extra)
    return doc


def check_version(doc):
    if not isinstance(doc, dict) or "version" not in doc:
        raise MalformedCheckpointError("missing version field")
    if doc["version"] != FORMAT_VERSION:
        raise VersionMismatchError(doc["version"])


def network_from_dict(doc: dict) -> Network:
    check_version(doc)
    try:
        dims = [int(d) for d in doc["dims"]]
        acts = list(doc["activations"])
        ws, bs = doc["weights"], doc["biases"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedCheckpointError(f"bad network document: {exc}") from exc
    if len(ws) != len(dims) - 1 or len(bs) != len(dims) - 1:
        raise ShapeMismatchError("layer count does not match dims")
    weights, biases = [], []
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        if len(ws[i]) != fi * fo or len(bs[i]) != fo:
            raise ShapeMismatchError(f"layer {i}: expected {fo}x{fi} weights and {fo} biases")
        weights.append(Tensor(np.array(ws[i], dtype=np.float64).reshape(fo, fi), requires_grad=True))
        biases.append(Tensor(np.array(bs[i], dtype=np.float64), requires_grad=True))
    try:
        return Network(dims, acts, weights, biases)
    except ValueError as exc:
        raise MalformedCheckpointError(str(exc)) from exc


def ema_from_dict(doc: dict, net: Network) -> EmaState | None:
    if "ema" not in doc:
        return None
    shadow = []
    for p, flat in zip(net.parameters(), doc["ema"]["shadow"]):
        if len(flat) != p.size:
            raise ShapeMismatchError("EMA shadow does not match network shape")
        shadow.append(np.array(flat, dtype=np.float64).reshape(p.shape))
    return EmaState(float(doc["ema"]["decay"]), shadow)


def read_json(path) -> dict:
    try:
        text = Path(path).read_text()
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedCheckpointError(f"{path}: {exc}") from exc


def write_json(doc: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def save_network(net: Network, path, kind="mlp", ema=None, **extra):
    write_json(network_to_dict(net, kind=kind, ema=ema, **extra), path)


def load_network(path) -> Network:
    return network_from_dict(read_json(path))
