"""Flat binary checkpoint container with a JSON sidecar.

File layout (all integers little-endian):

    bytes 0..7     magic b"MNCKPT01"
    bytes 8..15    uint64: byte length of the JSON manifest
    manifest       UTF-8 JSON {"arrays": [{"name", "dtype", "shape", "offset",
                   "nbytes"}, ...]}; offsets are relative to the data blob
    data blob      raw C-order array bytes, little-endian, back to back

The sidecar at ``<path>.json`` carries the run-config snapshot, the epoch, and
feature dims; nothing binary ever goes there.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .model import MomentNet

MAGIC = b"MNCKPT01"

_SUPPORTED = {"<f4", "<f8", "<i8", "|u1"}


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        code = array.dtype.newbyteorder("<").str
        if code not in _SUPPORTED:
            raise ValueError(f"unsupported dtype {array.dtype} for array {name}")
        data = array.astype(np.dtype(code), copy=False).tobytes(order="C")
        entries.append({
            "name": name,
            "dtype": code,
            "shape": list(array.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        blobs.append(data)
        offset += len(data)
    manifest = json.dumps({"arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint container (magic {magic!r})")
        manifest_len = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(manifest_len).decode("utf-8"))
        blob = fh.read()
    arrays = {}
    for entry in manifest["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        flat = np.frombuffer(blob[start:start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = flat.reshape(entry["shape"]).copy()
    return arrays


def save_model(path, model: MomentNet, cfg: RunConfig, epoch: int) -> None:
    arrays = {f"param/{name}": tensor.detach().cpu().numpy()
              for name, tensor in model.state_dict().items()}
    arrays["rng/torch"] = torch.get_rng_state().numpy()
    if model.generator is not None:
        arrays["rng/drop_path"] = model.generator.get_state().numpy()
    save_arrays(path, arrays)
    sidecar = {
        "config": dataclasses.asdict(cfg),
        "video_dim": model.video_dim,
        "query_dim": model.query_dim,
        "epoch": epoch,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_model(path) -> tuple[MomentNet, RunConfig, int]:
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    cfg = RunConfig(**sidecar["config"])
    arrays = load_arrays(path)
    generator = torch.Generator()
    if "rng/drop_path" in arrays:
        generator.set_state(torch.from_numpy(arrays["rng/drop_path"]))
    model = MomentNet.from_config(cfg, sidecar["video_dim"], sidecar["query_dim"],
                                  generator=generator)
    state = {name[len("param/"):]: torch.from_numpy(arr)
             for name, arr in arrays.items() if name.startswith("param/")}
    model.load_state_dict(state)
    return model, cfg, sidecar["epoch"]
