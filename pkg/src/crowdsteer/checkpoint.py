"""Versioned binary checkpoints.

Layout: a magic line ``CROWDSTEER-CKPT <version>``, one line of JSON header
(architecture, counters, RNG states, array index, payload size and SHA-256),
then the payload: every array as little-endian float64 in header order.
Loading verifies size and digest before building any state, so a damaged
file never yields a partial checkpoint.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .policy import NetConfig, PolicyNet

MAGIC = "CROWDSTEER-CKPT"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    net_config: NetConfig
    params: dict[str, np.ndarray]
    optimizer: dict | None = None  # {"t", "lr", "m": {...}, "v": {...}}
    counters: dict = field(default_factory=dict)  # iteration, beta, stage, ...
    rng_states: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_policy(cls, net: PolicyNet, **kw) -> "Checkpoint":
        return cls(net_config=net.config, params=net.state(), **kw)

    def policy(self, expected: NetConfig | None = None) -> PolicyNet:
        """Rebuild the network; ``expected`` guards against loading the wrong architecture."""
        if expected is not None and (expected.modality, expected.preset) != (self.net_config.modality,
                                                                             self.net_config.preset):
            raise CheckpointError(
                f"checkpoint architecture {self.net_config.modality}/{self.net_config.preset} does not match "
                f"requested {expected.modality}/{expected.preset}")
        net = PolicyNet(self.net_config, init="zeros")
        try:
            net.load_state(self.params)
        except ValueError as exc:
            raise CheckpointError(str(exc)) from exc
        return net


def _arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.optimizer is not None:
        out += [(f"adam_m/{k}", v) for k, v in ckpt.optimizer["m"].items()]
        out += [(f"adam_v/{k}", v) for k, v in ckpt.optimizer["v"].items()]
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    """Write atomically (temporary file then rename)."""
    path = Path(path)
    arrays = _arrays(ckpt)
    chunks, index, offset = [], [], 0
    for name, arr in arrays:
        a = np.ascontiguousarray(arr, dtype="<f8")
        chunks.append(a.tobytes())
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    payload = b"".join(chunks)
    header = {
        "net_config": {**asdict(ckpt.net_config), "log_std_init": list(ckpt.net_config.log_std_init)},
        "optimizer": None if ckpt.optimizer is None else {"t": ckpt.optimizer["t"], "lr": ckpt.optimizer["lr"]},
        "counters": ckpt.counters,
        "rng_states": ckpt.rng_states,
        "extra": ckpt.extra,
        "arrays": index,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    tmp = path.with_name(path.name + ".tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(f"{MAGIC} {ckpt.version}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    first, _, rest = blob.partition(b"\n")
    parts = first.decode("ascii", "replace").split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        version = int(parts[1])
    except ValueError:
        raise CheckpointError(f"{path}: bad version field {parts[1]!r}") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version} is not supported "
                              f"(this build reads version {FORMAT_VERSION})")
    head, sep, payload = rest.partition(b"\n")
    if not sep:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {header['payload_bytes']} "
                              "(truncated or padded file)")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: payload digest mismatch")
    arrays = {}
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=entry["offset"])
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(np.float64)
    cfg = header["net_config"]
    net_config = NetConfig(**{**cfg, "log_std_init": tuple(cfg["log_std_init"])})
    params = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
    optimizer = None
    if header["optimizer"] is not None:
        optimizer = {**header["optimizer"],
                     "m": {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")},
                     "v": {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}}
    return Checkpoint(net_config, params, optimizer, header["counters"], header["rng_states"],
                      header["extra"], version)
