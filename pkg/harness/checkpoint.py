"""
Binary checkpoint file:

  magic  b"BTMCKPT\\0"
  u32    format version (little endian)
  u64    header length
  bytes  canonical JSON header (config, fingerprint, stage, epoch, loss trace, PRNG state,
         array table of name / dtype / shape)
  bytes  raw array payloads in table order (C order, little endian)

Loading then saving reproduces the file byte for byte.
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from config import CHECKPOINT_FORMAT_VERSION
from harness.run_config import RunConfig, canonical_json
from utils.errors import CheckpointCorruptError, CheckpointError, CheckpointFingerprintError, CheckpointVersionError
from utils.logger import log_pipeline_step

MAGIC = b"BTMCKPT\x00"
_PREAMBLE = struct.Struct("<8sIQ")
STAGES = ("region", "main")


@dataclass
class Checkpoint:
    stage: str
    config: Dict[str, Any]
    fingerprint: str
    epoch: int
    parameters: "OrderedDict[str, np.ndarray]"
    momentum: "OrderedDict[str, np.ndarray]"
    rng_state: Dict[str, Any]
    loss_trace: List[float] = field(default_factory=list)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @property
    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)

    def network_config(self):
        cfg = self.run_config
        return cfg.region if self.stage == "region" else cfg.network


def _array_table(ckpt: Checkpoint) -> List[Dict[str, Any]]:
    table = []
    for group, arrays in (("param", ckpt.parameters), ("momentum", ckpt.momentum)):
        for name, array in arrays.items():
            table.append({
                "group": group,
                "name": name,
                "dtype": np.dtype(array.dtype).newbyteorder("<").str,
                "shape": list(array.shape),
            })
    return table


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.stage not in STAGES:
        raise CheckpointError(f"unknown checkpoint stage {ckpt.stage!r}")
    header = {
        "config": ckpt.config,
        "fingerprint": ckpt.fingerprint,
        "stage": ckpt.stage,
        "epoch": int(ckpt.epoch),
        "loss_trace": [float(x) for x in ckpt.loss_trace],
        "rng_state": ckpt.rng_state,
        "arrays": _array_table(ckpt),
    }
    header_bytes = canonical_json(header).encode("utf-8")
    chunks = [_PREAMBLE.pack(MAGIC, ckpt.format_version, len(header_bytes)), header_bytes]
    for entry in header["arrays"]:
        source = ckpt.parameters if entry["group"] == "param" else ckpt.momentum
        array = np.ascontiguousarray(source[entry["name"]], dtype=np.dtype(entry["dtype"]))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def checkpoint_save(ckpt: Checkpoint, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = checkpoint_bytes(ckpt)
    with open(path, "wb") as f:
        f.write(payload)
    log_pipeline_step("Checkpoint save", "COMPLETED", f"{path} ({ckpt.stage}, epoch {ckpt.epoch}, {len(payload)} bytes)")
    return path


def checkpoint_from_bytes(payload: bytes, expected_fingerprint: Optional[str] = None) -> Checkpoint:
    if len(payload) < _PREAMBLE.size:
        raise CheckpointCorruptError("file shorter than the checkpoint preamble")
    magic, version, header_length = _PREAMBLE.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CheckpointCorruptError("not a checkpoint file (bad magic)")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_FORMAT_VERSION})")

    offset = _PREAMBLE.size
    if offset + header_length > len(payload):
        raise CheckpointCorruptError("header extends past the end of the file")
    try:
        header = json.loads(payload[offset:offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"unreadable header: {e}") from e
    offset += header_length

    parameters, momentum = OrderedDict(), OrderedDict()
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointCorruptError(f"array {entry['name']} truncated")
        array = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(shape)
        target = parameters if entry["group"] == "param" else momentum
        target[entry["name"]] = array.astype(dtype.newbyteorder("="), copy=True)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointCorruptError(f"{len(payload) - offset} trailing bytes after the last array")

    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise CheckpointFingerprintError(
            f"checkpoint fingerprint {header['fingerprint'][:12]} does not match run {expected_fingerprint[:12]}"
        )
    return Checkpoint(
        stage=header["stage"],
        config=header["config"],
        fingerprint=header["fingerprint"],
        epoch=int(header["epoch"]),
        parameters=parameters,
        momentum=momentum,
        rng_state=header["rng_state"],
        loss_trace=list(header["loss_trace"]),
        format_version=int(version),
    )


def checkpoint_load(path: str, expected_fingerprint: Optional[str] = None) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        payload = f.read()
    return checkpoint_from_bytes(payload, expected_fingerprint)
