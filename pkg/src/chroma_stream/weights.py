"""Single-file checkpoint of named float64 arrays.

Layout::

    b"CHRW0001"                  8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest                     UTF-8 JSON list of {"name", "shape", "offset"}
    payload                      concatenated '<f8' arrays; offsets are relative
                                 to the first payload byte

Modules are stored under a namespace prefix (``backbone.``, ``refiner.``,
``codec.``) so one file can hold the whole system.
"""
from __future__ import annotations

import hashlib
import json
import struct
from typing import Mapping

import numpy as np
import torch

from .codec import Codebook, RvqCodec

MAGIC = b"CHRW0001"


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8", order="C")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        payload = fh.read()
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = a.reshape(shape).astype(np.float64)
    return out


def module_arrays(module: torch.nn.Module, namespace: str) -> dict:
    return {f"{namespace}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, arrays: Mapping[str, np.ndarray], namespace: str) -> None:
    prefix = namespace + "."
    state = {
        k[len(prefix):]: torch.as_tensor(v, dtype=torch.float64)
        for k, v in arrays.items()
        if k.startswith(prefix)
    }
    module.load_state_dict(state)


def weights_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over every parameter's raw bytes, in registration order."""
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def codec_arrays(codec, namespace: str = "codec") -> dict:
    out = {f"{namespace}.codebook.{cb.level}": cb.entries for cb in codec.codebooks}
    out[f"{namespace}.synth_kernel"] = codec.synth_kernel
    out[f"{namespace}.analysis"] = codec.analysis
    out[f"{namespace}.analysis_bias"] = codec.analysis_bias
    out[f"{namespace}.meta"] = np.array(
        [codec.frame_hop, codec.sample_rate, -1 if codec.eos_code is None else codec.eos_code,
         float(codec.zero_code)]
    )
    return out


def codec_from_arrays(arrays: Mapping[str, np.ndarray], namespace: str = "codec"):
    books = []
    level = 0
    while f"{namespace}.codebook.{level}" in arrays:
        books.append(Codebook(level, arrays[f"{namespace}.codebook.{level}"]))
        level += 1
    hop, rate, eos, zero = arrays[f"{namespace}.meta"].tolist()
    return RvqCodec(
        codebooks=books,
        frame_hop=int(hop),
        sample_rate=int(rate),
        synth_kernel=arrays[f"{namespace}.synth_kernel"],
        analysis=arrays[f"{namespace}.analysis"],
        analysis_bias=arrays[f"{namespace}.analysis_bias"],
        eos_code=None if eos < 0 else int(eos),
        zero_code=bool(zero),
    )
