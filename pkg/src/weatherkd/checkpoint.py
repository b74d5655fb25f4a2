"""Checkpoint container: versioned binary file with integrity checking.

Layout: magic, format version, header length, canonical-JSON header, raw
array payload. The header records every array's dtype/shape/offset plus a
sha256 of the payload, so corruption is detected before anything loads and
save -> load -> save round-trips byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointIntegrityError, ValidationError
from .utils import stable_json

MAGIC = b"WKDC"
VERSION = 1
FORMAT = "weatherkd/checkpoint@1"

_ALLOWED_DTYPES = {"float32", "float64", "int32", "int64", "uint8", "bool"}


@dataclass
class Checkpoint:
    """kind labels what the checkpoint holds (e.g. "teacher", "diffusion");
    meta is JSON-safe structured metadata; arrays maps flat keys to numpy
    arrays (model weights, optimizer moments, RNG states)."""

    kind: str
    fingerprint: str
    step: int = 0
    metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        index = []
        chunks = []
        offset = 0
        for key in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[key])
            dtype = str(arr.dtype)
            if dtype not in _ALLOWED_DTYPES:
                raise ValidationError(f"array {key!r} has unsupported dtype {dtype}")
            buf = arr.tobytes()
            index.append({
                "key": key, "dtype": dtype, "shape": list(arr.shape),
                "offset": offset, "nbytes": len(buf),
            })
            chunks.append(buf)
            offset += len(buf)
        payload = b"".join(chunks)
        header = {
            "format": FORMAT,
            "kind": self.kind,
            "fingerprint": self.fingerprint,
            "step": self.step,
            "metrics": self.metrics,
            "meta": self.meta,
            "arrays": index,
            "payload_nbytes": len(payload),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        }
        header_bytes = stable_json(header).encode("utf-8")
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            f.write(payload)
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise CheckpointIntegrityError(f"cannot read checkpoint {path}: {e}") from e
        if len(blob) < 16 or blob[:4] != MAGIC:
            raise CheckpointIntegrityError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", blob[4:8])
        if version != VERSION:
            raise CheckpointIntegrityError(f"{path}: unsupported version {version}")
        (header_len,) = struct.unpack("<Q", blob[8:16])
        if 16 + header_len > len(blob):
            raise CheckpointIntegrityError(f"{path}: truncated header")
        try:
            header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointIntegrityError(f"{path}: corrupt header: {e}") from e
        if header.get("format") != FORMAT:
            raise CheckpointIntegrityError(f"{path}: unknown format {header.get('format')!r}")
        payload = blob[16 + header_len :]
        if len(payload) != header["payload_nbytes"]:
            raise CheckpointIntegrityError(
                f"{path}: payload is {len(payload)} bytes, header says "
                f"{header['payload_nbytes']}")
        if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
            raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")
        arrays = {}
        for entry in header["arrays"]:
            dtype = entry["dtype"]
            if dtype not in _ALLOWED_DTYPES:
                raise CheckpointIntegrityError(f"{path}: bad dtype {dtype!r}")
            start, n = entry["offset"], entry["nbytes"]
            arr = np.frombuffer(payload[start : start + n], dtype=np.dtype(dtype))
            arrays[entry["key"]] = arr.reshape(entry["shape"]).copy()
        return cls(
            kind=header["kind"], fingerprint=header["fingerprint"],
            step=header["step"], metrics=header["metrics"],
            meta=header["meta"], arrays=arrays,
        )

    # -- array packing helpers ------------------------------------------

    def put_state_dict(self, prefix: str, module: torch.nn.Module) -> None:
        for key, tensor in module.state_dict().items():
            self.arrays[f"{prefix}/{key}"] = tensor.detach().cpu().contiguous().numpy().copy()

    def get_state_dict(self, prefix: str) -> dict:
        prefix = prefix + "/"
        out = {
            key[len(prefix):]: torch.from_numpy(arr.copy())
            for key, arr in self.arrays.items() if key.startswith(prefix)
        }
        if not out:
            raise CheckpointIntegrityError(f"no arrays under prefix {prefix!r}")
        return out

    def load_module(self, prefix: str, module: torch.nn.Module) -> torch.nn.Module:
        module.load_state_dict(self.get_state_dict(prefix))
        return module

    def put_optimizer(self, prefix: str, optim: torch.optim.Optimizer) -> None:
        sd = optim.state_dict()
        self.put_json(f"{prefix}/param_groups", sd["param_groups"])
        for idx, fields in sd["state"].items():
            for name, val in fields.items():
                tensor = val if torch.is_tensor(val) else torch.tensor(val)
                self.arrays[f"{prefix}/state/{idx}/{name}"] = (
                    tensor.detach().cpu().contiguous().numpy().copy())

    def get_optimizer_state(self, prefix: str) -> dict:
        param_groups = self.get_json(f"{prefix}/param_groups")
        state: dict = {}
        marker = f"{prefix}/state/"
        for key, arr in self.arrays.items():
            if not key.startswith(marker):
                continue
            idx_s, name = key[len(marker):].split("/", 1)
            state.setdefault(int(idx_s), {})[name] = torch.from_numpy(arr.copy())
        return {"state": state, "param_groups": param_groups}

    def load_optimizer(self, prefix: str, optim: torch.optim.Optimizer) -> None:
        optim.load_state_dict(self.get_optimizer_state(prefix))

    def put_json(self, key: str, obj) -> None:
        self.arrays[key] = np.frombuffer(
            stable_json(obj).encode("utf-8"), dtype=np.uint8).copy()

    def get_json(self, key: str):
        if key not in self.arrays:
            raise CheckpointIntegrityError(f"no JSON entry {key!r}")
        return json.loads(self.arrays[key].tobytes().decode("utf-8"))
