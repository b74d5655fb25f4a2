"""Seeding, image IO, and hashing helpers used across modules."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image


def rng_from(*keys) -> np.random.Generator:
    """Independent numpy RNG derived from a tuple of keys.

    Strings are folded into integers so streams like (corpus_seed, "spec", i)
    and (corpus_seed, "noise", i) never collide.
    """
    return np.random.default_rng(np.random.SeedSequence(_as_entropy(keys)))


def derive_seed(*keys) -> int:
    """Stable 63-bit integer seed derived from a tuple of keys."""
    ss = np.random.SeedSequence(_as_entropy(keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def _as_entropy(keys) -> list[int]:
    out = []
    for k in keys:
        if isinstance(k, str):
            digest = hashlib.sha256(k.encode("utf-8")).digest()
            out.append(int.from_bytes(digest[:8], "little"))
        elif isinstance(k, (int, np.integer)):
            out.append(int(k) & (2**64 - 1))
        else:
            raise TypeError(f"seed keys must be int or str, got {type(k)!r}")
    return out


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed))
    return gen


# ---------------------------------------------------------------------------
# image IO: float arrays in [0,1], stored as 8-bit PNG


def float_to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def uint8_to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 255.0


def save_image(img: np.ndarray, path: Path | str) -> None:
    """Write an (H, W, 3) float image in [0,1] as PNG."""
    Image.fromarray(float_to_uint8(img)).save(str(path), format="PNG")


def load_image(path: Path | str) -> np.ndarray:
    """Read an image file as an (H, W, 3) float array in [0,1]."""
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"))
    return uint8_to_float(arr)


def images_to_torch(batch: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) float array -> (N, 3, H, W) float32 tensor."""
    if batch.ndim == 3:
        batch = batch[None]
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).float()


def torch_to_images(batch: torch.Tensor) -> np.ndarray:
    """(N, 3, H, W) tensor -> (N, H, W, 3) float32 array."""
    return batch.detach().cpu().numpy().transpose(0, 2, 3, 1)


# ---------------------------------------------------------------------------
# hashing


def stable_json(obj) -> str:
    """Canonical JSON used for fingerprints and byte-stable manifests."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def weight_hash(module: torch.nn.Module) -> str:
    """Order-stable hash of all parameters and buffers of a module.

    Used to prove that frozen networks stay frozen across a training run.
    """
    h = hashlib.sha256()
    state = module.state_dict()
    for key in sorted(state):
        h.update(key.encode("utf-8"))
        tensor = state[key].detach().cpu().contiguous()
        h.update(np.ascontiguousarray(tensor.numpy()).tobytes())
    return h.hexdigest()


def file_sha256(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
