"""Checkpoint container: config snapshot, parameters, optimiser state, iteration.

Layout: magic ``OCRC``, u16 version, u32 header length, a JSON header with
sorted keys, then every array as raw little-endian float64 in header order.
Nothing time- or host-dependent is stored, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ContractError, DatasetFormatError
from .model import OccRobNet
from .training import Optimizer, make_optimizer

MAGIC = b"OCRC"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    config: RunConfig
    iteration: int
    parameters: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_steps: int = 0

    @property
    def rng_state(self) -> dict:
        # every random draw is keyed by (seed, tag, iteration), so this pair is the whole state
        return {"seed": self.config.seed, "counter": self.iteration}


def capture(model: OccRobNet, optimizer: Optimizer | None, iteration: int) -> Checkpoint:
    params = {name: p.data.copy() for name, p in model.named_parameters()}
    state = {k: v.copy() for k, v in optimizer.state_arrays().items()} if optimizer else {}
    return Checkpoint(model.config, iteration, params, state, optimizer.steps if optimizer else 0)


def restore(ckpt: Checkpoint) -> tuple[OccRobNet, Optimizer]:
    model = OccRobNet(ckpt.config)
    named = dict(model.named_parameters())
    if set(named) != set(ckpt.parameters):
        missing = sorted(set(named) ^ set(ckpt.parameters))
        raise ContractError(f"checkpoint parameters do not match the model: {missing[:5]}")
    for name, p in named.items():
        value = ckpt.parameters[name]
        if value.shape != p.data.shape:
            raise ContractError(f"{name}: checkpoint shape {value.shape} != model shape {p.data.shape}")
        p.data[...] = value
    optimizer = make_optimizer(model, ckpt.config)
    optimizer.load_state(ckpt.optimizer_steps, ckpt.optimizer_state)
    return model, optimizer


def dumps(ckpt: Checkpoint) -> bytes:
    arrays = [("param", k, v) for k, v in ckpt.parameters.items()]
    arrays += [("optim", k, v) for k, v in ckpt.optimizer_state.items()]
    header = {
        "config": ckpt.config.to_dict(),
        "iteration": ckpt.iteration,
        "rng": ckpt.rng_state,
        "optimizer": {"kind": ckpt.config.optimizer, "steps": ckpt.optimizer_steps},
        "arrays": [[kind, name, list(value.shape)] for kind, name, value in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, _, v in arrays)
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + body


def loads(data: bytes) -> Checkpoint:
    if len(data) < _PREFIX.size:
        raise DatasetFormatError("checkpoint truncated before header")
    magic, version, size = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise DatasetFormatError(f"not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + size])
    except ValueError as exc:
        raise DatasetFormatError(f"corrupt checkpoint header: {exc}") from None
    offset = start + size
    params, optim = {}, {}
    for kind, name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise DatasetFormatError(f"checkpoint truncated inside array {name}")
        value = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        (params if kind == "param" else optim)[name] = value
        offset = end
    if offset != len(data):
        raise DatasetFormatError(f"{len(data) - offset} trailing bytes after checkpoint arrays")
    config = RunConfig.from_dict(header["config"])
    return Checkpoint(config, int(header["iteration"]), params, optim, int(header["optimizer"]["steps"]))


def save(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())
